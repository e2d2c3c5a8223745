//! Write every built-in fixture mesh as JSON.
//!
//! cargo run --release --example write_fixtures -- [dir]

use homesh::fixtures;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    match fixtures::write_all(std::path::Path::new(&dir)) {
        Ok(names) => {
            for n in names {
                println!("{dir}/{n}");
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
