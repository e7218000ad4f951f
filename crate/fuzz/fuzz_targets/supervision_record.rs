#![no_main]

use libfuzzer_sys::fuzz_target;
use pointsup_core::losses::{base_loss, LossConfig};
use pointsup_core::seg::{ClassCatalog, ScoreMap};
use pointsup_core::supervision::SupervisionRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(record) = serde_json::from_slice::<SupervisionRecord>(data) else {
        return;
    };
    let catalog = ClassCatalog::with_background(3).unwrap();
    if record.validate(&catalog, 8, 8).is_ok() {
        let v = base_loss(&ScoreMap::zeros(8, 8, 4), &record, &LossConfig::default()).expect("valid record has a loss");
        assert!(v.value.is_finite());
    }
});
