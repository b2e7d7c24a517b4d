#![no_main]

use libfuzzer_sys::fuzz_target;
use parafac2_mtl::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(cp) = Checkpoint::read(data) {
        let _ = cp.to_model();
        let _ = cp.task_set();
    }
});
