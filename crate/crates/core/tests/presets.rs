use std::path::Path;

use paris_rml::config::Config;

#[test]
fn shipped_presets_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = Config::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            assert_eq!(cfg.model.param_floor, 0.01, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
