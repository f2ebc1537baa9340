use std::collections::BTreeSet;

use proptest::prelude::*;
use regex::Regex;
use taas_core::engine::{assess_history, assess_resources, render_semantic, ResourceSnapshot, TrustConfig};
use taas_core::registry::{Outcome, PerformanceRecord};
use taas_core::requirements::{CpuClass, HistoryDimension, ResourceRequirement, TaskRequirements};

fn records(samples: &[(f64, f64)]) -> Vec<PerformanceRecord> {
    samples
        .iter()
        .enumerate()
        .map(|(i, &(speed, acc))| PerformanceRecord {
            timestamp: i as f64,
            task_type: "facial recognition".into(),
            device_id: "d".into(),
            processing_speed: speed,
            completion_accuracy: acc,
            outcome: Outcome::Completed,
        })
        .collect()
}

/// Every combination of the four dimensions, expressed as a bitmask.
fn requirements(mask: u8, storage_mb: f64) -> TaskRequirements {
    let mut dims = BTreeSet::new();
    if mask & 1 != 0 {
        dims.insert(HistoryDimension::ProcessingSpeed);
    }
    if mask & 2 != 0 {
        dims.insert(HistoryDimension::CompletionAccuracy);
    }
    let mut resources = Vec::new();
    if mask & 4 != 0 {
        resources.push(ResourceRequirement::Storage { min_mb: storage_mb });
    }
    if mask & 8 != 0 {
        resources.push(ResourceRequirement::Cpu { min_class: CpuClass::High });
    }
    TaskRequirements {
        task_type: "facial recognition".into(),
        history_window: 604_800.0,
        history_dimensions: dims,
        resources,
    }
}

fn snapshot(ghz: f64, gb: f64) -> ResourceSnapshot {
    ResourceSnapshot {
        device_id: "d".into(),
        cpu_ghz: Some(ghz),
        available_storage_gb: Some(gb),
        captured_at: 0.0,
    }
}

fn arb_samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..20.0, 0.5f64..=1.0), 0..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unrequested_dimensions_never_surface(
        mask in 0u8..16,
        samples in arb_samples(),
        ghz in 0.5f64..8.0,
        gb in 0.0f64..16.0,
        need_mb in 1.0f64..8192.0,
    ) {
        let req = requirements(mask, need_mb);
        let cfg = TrustConfig::default();
        let h = assess_history("d", &records(&samples), &req, &cfg);
        let r = assess_resources(&snapshot(ghz, gb), &req, &cfg);
        let (his, res) = render_semantic(&h, &r, &req);

        prop_assert_eq!(h.mean_processing_speed.is_some(), mask & 1 != 0 && !samples.is_empty());
        prop_assert_eq!(h.mean_completion_accuracy.is_some(), mask & 2 != 0 && !samples.is_empty());
        prop_assert_eq!(r.available_storage_gb.is_some(), mask & 4 != 0);
        prop_assert_eq!(r.storage_sufficient.is_some(), mask & 4 != 0);
        prop_assert_eq!(r.cpu_class.is_some(), mask & 8 != 0);
        prop_assert_eq!(r.cpu_ghz.is_some(), mask & 8 != 0);

        prop_assert_eq!(his.contains("processing speed"), mask & 1 != 0);
        prop_assert_eq!(his.contains("accuracy"), mask & 2 != 0);
        prop_assert_eq!(res.contains("storage"), mask & 4 != 0);
        prop_assert_eq!(res.contains("CPU"), mask & 8 != 0);

        let json = serde_json::to_string(&(&h, &r)).unwrap();
        prop_assert_eq!(json.contains("processing_speed"), mask & 1 != 0 && !samples.is_empty());
        prop_assert_eq!(json.contains("accuracy"), mask & 2 != 0 && !samples.is_empty());
        prop_assert_eq!(json.contains("storage"), mask & 4 != 0);
        prop_assert_eq!(json.contains("cpu"), mask & 8 != 0);
    }

    #[test]
    fn raising_measurements_never_revokes_trust(
        mask in 0u8..4,
        samples in arb_samples(),
        bumps in prop::collection::vec((0.0f64..5.0, 0.0f64..0.5), 10),
    ) {
        let req = requirements(mask, 1024.0);
        let cfg = TrustConfig::default();
        let raised: Vec<(f64, f64)> = samples
            .iter()
            .zip(&bumps)
            .map(|(&(s, a), &(ds, da))| (s + ds, (a + da).min(1.0)))
            .collect();
        let before = assess_history("d", &records(&samples), &req, &cfg);
        let after = assess_history("d", &records(&raised), &req, &cfg);
        prop_assert!(!before.trustworthy || after.trustworthy);
    }

    #[test]
    fn gate_matches_hand_arithmetic(mask in 0u8..4, samples in arb_samples()) {
        let req = requirements(mask, 1024.0);
        let n = samples.len() as f64;
        let mean_speed = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let mean_acc = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let want = samples.len() >= 3
            && (mask & 1 == 0 || mean_speed >= 5.0)
            && (mask & 2 == 0 || mean_acc >= 0.95);
        let h = assess_history("d", &records(&samples), &req, &TrustConfig::default());
        prop_assert_eq!(h.trustworthy, want);
        prop_assert_eq!(h.sample_count, samples.len());
    }

    #[test]
    fn semantic_strings_invert_to_their_numbers(
        speed in 0.0f64..100.0,
        acc in 0.0f64..=1.0,
        ghz in 0.5f64..8.0,
        gb in 0.0f64..64.0,
        need_mb in 1.0f64..65536.0,
    ) {
        let req = requirements(15, need_mb);
        let cfg = TrustConfig::default();
        let h = assess_history("d", &records(&[(speed, acc); 3]), &req, &cfg);
        let r = assess_resources(&snapshot(ghz, gb), &req, &cfg);
        let (his, res) = render_semantic(&h, &r, &req);

        let his_re = Regex::new(r"^task processing speed is ([0-9.]+) MB/second, task completion accuracy is ([0-9.]+)%$").unwrap();
        let res_re = Regex::new(r"^CPU is ([0-9.]+) GHz \((low|moderate|high) processing speed\), and the available storage is ([0-9.]+) GB \(([<=>]) ([0-9.]+) GB required\)$").unwrap();
        let c = his_re.captures(&his).unwrap();
        let num = |s: &str| s.parse::<f64>().unwrap();
        // Two-decimal rendering bounds the recovery error.
        let close = |got: f64, want: f64| (got - want).abs() <= 0.005 + 1e-9 * want.abs().max(1.0);
        prop_assert!(close(num(&c[1]), h.mean_processing_speed.unwrap()));
        prop_assert!(close(num(&c[2]), h.mean_completion_accuracy.unwrap() * 100.0));

        let c = res_re.captures(&res).unwrap();
        prop_assert!(close(num(&c[1]), ghz));
        prop_assert_eq!(&c[2], cfg.cpu_class(ghz).to_string());
        prop_assert!(close(num(&c[3]), gb));
        let required = need_mb / 1024.0;
        prop_assert!(close(num(&c[5]), required));
        let want_cmp = if gb > required { ">" } else if gb == required { "=" } else { "<" };
        prop_assert_eq!(&c[4], want_cmp);
    }

    #[test]
    fn rendering_is_deterministic(mask in 0u8..16, samples in arb_samples(), ghz in 0.5f64..8.0, gb in 0.0f64..16.0) {
        let req = requirements(mask, 1024.0);
        let cfg = TrustConfig::default();
        let once = || {
            let h = assess_history("d", &records(&samples), &req, &cfg);
            let r = assess_resources(&snapshot(ghz, gb), &req, &cfg);
            render_semantic(&h, &r, &req)
        };
        prop_assert_eq!(once(), once());
    }
}

#[test]
fn resource_gate_matches_threshold_table() {
    let cfg = TrustConfig::default();
    let req = requirements(12, 1024.0);
    for (ghz, gb, want) in [
        (2.0, 4.0, false),
        (6.0, 8.0, true),
        (6.0, 4.0, true),
        (6.0, 0.5, false),
        (4.0, 1.0, true),
        (3.99, 100.0, false),
        (1.0, 1.0, false),
    ] {
        assert_eq!(assess_resources(&snapshot(ghz, gb), &req, &cfg).trustworthy, want, "{ghz} GHz {gb} GB");
    }
}

#[test]
fn missing_snapshot_fields_fail_requested_thresholds() {
    let cfg = TrustConfig::default();
    let snap = ResourceSnapshot {
        device_id: "d".into(),
        cpu_ghz: None,
        available_storage_gb: None,
        captured_at: 0.0,
    };
    assert!(!assess_resources(&snap, &requirements(4, 1.0), &cfg).trustworthy);
    assert!(!assess_resources(&snap, &requirements(8, 1.0), &cfg).trustworthy);
    assert!(assess_resources(&snap, &requirements(0, 1.0), &cfg).trustworthy);
}
