//! Replays the checked-in fuzz seeds through the same parser entry points
//! the fuzz targets use, so a regression shows up without a nightly
//! toolchain.

use std::fs;
use std::path::PathBuf;

use parafac2_mtl::cli::CliConfig;
use parafac2_mtl::model::Checkpoint;
use parafac2_mtl::tensor::{read_labels_csv, read_tensor_jsonl, write_tensor_jsonl};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn tensor_seeds() {
    let mut parsed = 0;
    for (_, data) in seeds("tensor_jsonl") {
        if let Ok(t) = read_tensor_jsonl(data.as_slice()) {
            let mut buf = Vec::new();
            write_tensor_jsonl(&t, &mut buf).unwrap();
            assert_eq!(read_tensor_jsonl(buf.as_slice()).unwrap(), t);
            parsed += 1;
        }
    }
    assert!(parsed > 0);
}

#[test]
fn label_seeds() {
    let results: Vec<bool> = seeds("labels_csv").iter().map(|(_, d)| read_labels_csv(d.as_slice()).is_ok()).collect();
    assert!(results.contains(&true) && results.contains(&false));
}

#[test]
fn checkpoint_seeds() {
    let mut models = 0;
    for (_, data) in seeds("checkpoint_json") {
        if let Ok(cp) = Checkpoint::read(data.as_slice()) {
            models += cp.to_model().is_ok() as usize;
            let _ = cp.task_set();
        }
    }
    assert!(models > 0);
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("cli_config") {
        let c = CliConfig::from_json(std::str::from_utf8(&data).unwrap());
        assert!(c.and_then(|c| c.validate()).is_ok(), "{name}");
    }
}
