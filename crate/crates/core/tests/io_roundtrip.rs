use pfch_core::diagnostics::{DiagnosticsRecord, DiagnosticsSeries, COLUMNS};
use pfch_core::io::config::parse_config;
use pfch_core::io::series::{series_from_csv, series_to_csv};
use pfch_core::io::snapshot::Snapshot;
use proptest::prelude::*;

fn record(row: Vec<f64>) -> DiagnosticsRecord {
    DiagnosticsRecord::from_row(&row).unwrap()
}

proptest! {
    #[test]
    fn series_survives_csv(rows in prop::collection::vec(prop::collection::vec(-1e12f64..1e12, COLUMNS.len()), 1..6)) {
        let mut s = DiagnosticsSeries::new();
        for (k, mut r) in rows.into_iter().enumerate() {
            let step = COLUMNS.iter().position(|c| *c == "step").unwrap();
            let iters = COLUMNS.iter().position(|c| *c == "inner_iters").unwrap();
            r[step] = k as f64;
            r[iters] = (k * 3) as f64;
            s.records.push(record(r));
        }
        let bytes = series_to_csv(&s).unwrap();
        let back = series_from_csv(&bytes).unwrap();
        prop_assert_eq!(back.records.len(), s.records.len());
        for (a, b) in back.records.iter().zip(&s.records) {
            prop_assert_eq!(a.to_row(), b.to_row());
        }
    }

    #[test]
    fn snapshot_survives_bytes(nx in 1usize..6, ny in 1usize..6, seed in any::<u64>()) {
        let mut s = Snapshot::new(nx, ny);
        let mut x = seed;
        for name in ["c_a", "phi"] {
            let v = (0..nx * ny)
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
                    f64::from_bits(x >> 2)
                })
                .collect();
            s.push(name, v).unwrap();
        }
        let back = Snapshot::from_bytes(&s.to_bytes().unwrap()).unwrap();
        for name in ["c_a", "phi"] {
            let a: Vec<u64> = back.field(name).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = s.field(name).unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "cfg") {
            let text = std::fs::read_to_string(&p).unwrap();
            parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen > 0);
}
