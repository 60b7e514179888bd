//! The hand-maintained header must declare every exported symbol.

#[test]
fn header_declares_every_export() {
    let src = include_str!("../src/lib.rs");
    let header = include_str!("../include/ilmpc.h");

    let mut missing = Vec::new();
    for line in src.lines() {
        let line = line.trim_start();
        let Some(rest) = line
            .strip_prefix("pub unsafe extern \"C\" fn ")
            .or_else(|| line.strip_prefix("pub extern \"C\" fn "))
        else {
            continue;
        };
        let name: String = rest
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect();
        if !header.contains(&name) {
            missing.push(name);
        }
    }
    assert!(missing.is_empty(), "missing from ilmpc.h: {missing:?}");
}
