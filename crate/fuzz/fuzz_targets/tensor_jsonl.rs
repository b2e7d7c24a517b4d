#![no_main]

use libfuzzer_sys::fuzz_target;
use parafac2_mtl::tensor::{read_tensor_jsonl, write_tensor_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_tensor_jsonl(data) {
        let mut buf = Vec::new();
        write_tensor_jsonl(&t, &mut buf).expect("a parsed tensor serializes");
        let again = read_tensor_jsonl(buf.as_slice()).expect("serialized tensor parses");
        assert_eq!(again.n_slices(), t.n_slices());
    }
});
