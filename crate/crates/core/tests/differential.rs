mod common;

use common::{differential, fixture_image, micro_names};

#[test]
fn engine_matches_interpreter_on_micro_corpus() {
    for (i, name) in micro_names().iter().enumerate() {
        let image = fixture_image(name);
        differential(&image, 100, 3, 0xd1ff + i as u64).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn engine_matches_interpreter_on_contracts() {
    for (i, name) in [
        "marketplace",
        "marketplace_fixed",
        "level4",
        "ib_tokens",
        "msc_item",
        "native_hello",
    ]
    .iter()
    .enumerate()
    {
        let image = fixture_image(name);
        differential(&image, 40, 8, 0xc0de + i as u64).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
