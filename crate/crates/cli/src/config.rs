//! Flag / config-file layering and the resolved run record.
//!
//! A subcommand's arguments are serialized to a TOML table; any key the
//! user did not pass on the command line is then taken from the optional
//! config file (either top level or a `[<subcommand>]` table). Flags win.

use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

pub fn layer<T: Serialize + DeserializeOwned>(
    args: T,
    matches: &ArgMatches,
    subcommand: &str,
    config: Option<&Path>,
) -> CliResult<T> {
    let Some(path) = config else { return Ok(args) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let file: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
    let mut merged = toml::Table::try_from(&args).map_err(|e| CliError::Config(e.to_string()))?;
    let section = file.get(subcommand).and_then(toml::Value::as_table);
    let mut apply = |table: &toml::Table| -> CliResult<()> {
        for (key, value) in table {
            if value.is_table() {
                continue;
            }
            let id = key.replace('-', "_");
            let from_flag = matches
                .ids()
                .any(|i| i.as_str() == id && matches.value_source(&id) == Some(ValueSource::CommandLine));
            let known = matches.ids().any(|i| i.as_str() == id);
            if !known {
                return Err(CliError::Config(format!(
                    "unknown key `{key}` for `{subcommand}` in {}",
                    path.display()
                )));
            }
            if !from_flag {
                merged.insert(id, value.clone());
            }
        }
        Ok(())
    };
    // `subcommand` and `version` appear in written run configs.
    let top: toml::Table = file
        .iter()
        .filter(|(k, v)| !v.is_table() && k.as_str() != "subcommand" && k.as_str() != "version")
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    apply(&top)?;
    if let Some(s) = section {
        apply(s)?;
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))
}

/// Writes `<dir>/run_config.toml` holding the subcommand and its fully
/// resolved arguments.
pub fn write_run_config<T: Serialize>(dir: &Path, subcommand: &str, args: &T) -> CliResult<()> {
    let mut table = toml::Table::new();
    table.insert("subcommand".into(), toml::Value::String(subcommand.into()));
    table.insert("version".into(), toml::Value::String(env!("CARGO_PKG_VERSION").into()));
    let resolved = toml::Table::try_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    table.insert(subcommand.into(), toml::Value::Table(resolved));
    let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let path = dir.join(RUN_CONFIG_FILE);
    fs::write(&path, text).map_err(|e| pkws::Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}
