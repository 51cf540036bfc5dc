//! Command-line front end. Argument handling is deliberately small: one
//! command word, an optional `--config PATH`, and any number of
//! `--section.key VALUE` overrides that patch the loaded TOML in place.

pub mod checkpoint;
pub mod commands;
pub mod config;

use commands::CliError;

const USAGE: &str = "\
usage: tabtrans <command> [--config FILE] [--section.key VALUE]...

commands:
  prepare     fit the schema on training rows, encode, and cache the splits
  train       supervised training (train.method picks supervised / entropy /
              pseudo_label) -> checkpoint.tabt + history.csv
  pretrain    self-supervised objective on the training partition
              -> pretrain.tabt + pretrain_history.csv
  finetune    continue from a pre-trained backbone -> checkpoint.tabt
  eval        AUC on the validation and test partitions -> eval.csv
  probe       layer-wise linear probes -> probe.csv
  robustness  corruption sweep on the test partition -> robustness.csv
  export      contextual embeddings as CSV -> embeddings.csv

options:
  --config FILE        TOML run configuration (defaults apply without it)
  --section.key VALUE  override one config key, e.g. --model.n_layers 3
                       or --eval.rates [0.0,0.5,1.0]
  --help               print this message
  --version            print the crate version

exit codes: 0 ok, 2 config, 3 data, 4 training, 5 evaluation.";

/// Run the CLI against already-split arguments (no program name) and return
/// the process exit code. Kept apart from `main` so tests can call it.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    if args.iter().any(|a| a == "--help" || a == "-h") || args.is_empty() {
        println!("{USAGE}");
        return Ok(());
    }
    if args.iter().any(|a| a == "--version" || a == "-V") {
        println!("tabtrans {}", env!("CARGO_PKG_VERSION"));
        return Ok(());
    }

    let command = args[0].as_str();
    if command.starts_with('-') {
        return Err(CliError::Config(format!(
            "expected a command word before options, got {command:?}"
        )));
    }
    let (config_path, overrides) = parse_options(&args[1..])?;
    let cfg = config::load(config_path.as_deref(), &overrides)?;

    match command {
        "prepare" => commands::cmd_prepare(&cfg),
        "train" => commands::cmd_train(&cfg),
        "pretrain" => commands::cmd_pretrain(&cfg),
        "finetune" => commands::cmd_finetune(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "probe" => commands::cmd_probe(&cfg),
        "robustness" => commands::cmd_robustness(&cfg),
        "export" => commands::cmd_export(&cfg),
        other => Err(CliError::Config(format!(
            "unknown command {other:?}; run with --help for the list"
        ))),
    }
}

/// Split `--config PATH` from `--section.key VALUE` pairs. Every option takes
/// exactly one value argument; bare words outside a pair are errors.
fn parse_options(args: &[String]) -> Result<(Option<String>, Vec<(String, String)>), CliError> {
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("unexpected argument {arg:?}")))?;
        if key.is_empty() {
            return Err(CliError::Config("empty option name".into()));
        }
        let value = it
            .next()
            .ok_or_else(|| CliError::Config(format!("--{key} expects a value")))?
            .clone();
        if key == "config" {
            if config_path.replace(value).is_some() {
                return Err(CliError::Config("--config given twice".into()));
            }
        } else if key.contains('.') {
            overrides.push((key.to_string(), value));
        } else {
            return Err(CliError::Config(format!(
                "unknown option --{key}; overrides use --section.key"
            )));
        }
    }
    Ok((config_path, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn options_split_config_from_overrides() {
        let (path, ov) = parse_options(&s(&[
            "--config", "run.toml", "--model.dim", "16", "--data.csv", "a.csv",
        ]))
        .unwrap();
        assert_eq!(path.as_deref(), Some("run.toml"));
        assert_eq!(
            ov,
            vec![
                ("model.dim".to_string(), "16".to_string()),
                ("data.csv".to_string(), "a.csv".to_string()),
            ]
        );
    }

    #[test]
    fn malformed_options_are_config_errors() {
        for bad in [
            s(&["stray"]),
            s(&["--model.dim"]),
            s(&["--verbose", "1"]),
            s(&["--config", "a", "--config", "b"]),
        ] {
            let err = parse_options(&bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad:?}");
        }
    }

    #[test]
    fn unknown_commands_exit_with_the_config_code() {
        assert_eq!(run(&s(&["frobnicate"])), 2);
        assert_eq!(run(&s(&["--model.dim", "8"])), 2);
    }
}
