#![no_main]

use libfuzzer_sys::fuzz_target;
use pointsup_core::annosim::AnnotationEvent;
use pointsup_core::seg::ClassCatalog;

fuzz_target!(|data: &[u8]| {
    let Ok(event) = serde_json::from_slice::<AnnotationEvent>(data) else {
        return;
    };
    let json = serde_json::to_vec(&event).unwrap();
    assert_eq!(serde_json::from_slice::<AnnotationEvent>(&json).unwrap(), event);
    let catalog = ClassCatalog::with_background(5).unwrap();
    if event.validate(32, 32, &catalog).is_ok() {
        let record = event.to_record(32, 32, &catalog);
        if let Ok(r) = record {
            r.validate(&catalog, 32, 32).expect("records built from valid events validate");
        }
    }
});
