//! One running system: network, clock, registry, trust service and device
//! servers, wired together the way a deployment would be.

use std::collections::BTreeMap;
use std::sync::Arc;

use taas_wire::{Locator, Network, ServerHandle};

use crate::clock::Clock;
use crate::device::{DeviceAgent, DeviceError, DeviceProfile, DeviceServer};
use crate::owner::TaskOwner;
use crate::registry::{DeviceRecord, PerformanceRecord, Registry, RegistryError};
use crate::service::{ServiceConfig, ServiceError, TrustService};

#[derive(Debug, thiserror::Error)]
pub enum DeploymentError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

pub struct Deployment {
    pub network: Network,
    pub clock: Arc<dyn Clock>,
    pub registry: Arc<Registry>,
    pub service: Arc<TrustService>,
    service_handle: ServerHandle,
    devices: BTreeMap<String, DeviceServer>,
}

impl Deployment {
    /// Starts a trust service at `service_at` with an in-memory registry.
    pub fn start(
        network: Network,
        clock: Arc<dyn Clock>,
        service_at: Locator,
        config: ServiceConfig,
    ) -> Result<Self, DeploymentError> {
        let registry = Arc::new(Registry::new(service_at.clone()));
        Self::with_registry(network, clock, registry, config)
    }

    pub fn with_registry(
        network: Network,
        clock: Arc<dyn Clock>,
        registry: Arc<Registry>,
        config: ServiceConfig,
    ) -> Result<Self, DeploymentError> {
        Self::with_service(TrustService::new(registry, network, clock).with_config(config))
    }

    /// Serves an already configured service at its registry's trust-service
    /// address.
    pub fn with_service(service: TrustService) -> Result<Self, DeploymentError> {
        let service = Arc::new(service);
        let registry = Arc::clone(service.registry());
        let service_handle = service.serve(&registry.trust_service_address())?;
        registry.set_trust_service_address(service_handle.locator().clone());
        Ok(Self {
            network: service.network().clone(),
            clock: Arc::clone(service.clock()),
            registry,
            service,
            service_handle,
            devices: BTreeMap::new(),
        })
    }

    pub fn trust_service_address(&self) -> &Locator {
        self.service_handle.locator()
    }

    /// Starts the device's agent server at `at` and registers it.
    pub fn add_device(&mut self, profile: DeviceProfile, at: Locator) -> Result<&DeviceServer, DeploymentError> {
        let id = profile.device_id.clone();
        let types = profile.supported_types();
        let agent = DeviceAgent::new(profile, Arc::clone(&self.clock))?;
        let server = DeviceServer::start(&self.network, &at, agent)?;
        self.registry.register_device(DeviceRecord {
            device_id: id.clone(),
            agent_address: server.locator().clone(),
            supported_task_types: types,
        })?;
        self.devices.insert(id.clone(), server);
        Ok(&self.devices[&id])
    }

    pub fn device(&self, id: &str) -> Option<&DeviceServer> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceServer> {
        self.devices.values()
    }

    pub fn seed_history(&self, records: impl IntoIterator<Item = PerformanceRecord>) -> Result<(), DeploymentError> {
        for r in records {
            self.registry.append_performance(r)?;
        }
        Ok(())
    }

    pub fn owner(&self, owner_id: &str) -> TaskOwner {
        TaskOwner::new(owner_id, self.network.clone(), self.trust_service_address().clone())
    }

    pub fn shutdown(&self) {
        for d in self.devices.values() {
            d.shutdown();
        }
        self.service_handle.shutdown();
    }
}

impl Drop for Deployment {
    fn drop(&mut self) {
        self.shutdown();
    }
}
