//! Library side of the `adapspline` command-line tool: configuration,
//! CSV and Matrix Market I/O, the fit artifact and the subcommands.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod matrix_market;

pub use error::CliError;

/// Separate `--key value` / `--key=value` config overrides from the rest of
/// the command line. Keys are those of [`config::KEYS`].
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").map(|k| k.split('=').next().unwrap_or(k).to_string());
        match key {
            Some(k) if config::KEYS.contains(&k.as_str()) => {
                let inline = a.contains('=');
                overrides.push(a);
                if !inline {
                    if let Some(v) = it.next() {
                        overrides.push(v);
                    }
                }
            }
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}
