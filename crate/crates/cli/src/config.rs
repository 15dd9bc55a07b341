//! `--config FILE` support: TOML values become flags, inserted right after
//! the subcommand so anything typed on the command line wins.
//!
//! Top-level keys apply to every subcommand that has the flag; keys in a
//! table named after the subcommand path (`[eval]`, `[neural.train]`) apply
//! to that subcommand only and must name one of its flags. Intermediate
//! tables (`[neural]`) apply to the subcommands below them.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, Command};
use toml::{Table, Value};

use crate::UsageError;

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Walks the subcommand names in `argv`; returns the path and the index of
/// the last subcommand token.
fn subcommand_path<'c>(argv: &[OsString], root: &'c Command) -> (Vec<&'c Command>, usize) {
    let mut cmds = vec![root];
    let mut last = 0;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        let cur = *cmds.last().unwrap();
        match cur.find_subcommand(a.as_ref()) {
            Some(sub) => {
                cmds.push(sub);
                last = i;
                i += 1;
            }
            None => break,
        }
    }
    (cmds, last)
}

fn find_arg<'c>(cmd: &'c Command, key: &str) -> Option<&'c Arg> {
    let long = key.replace('_', "-");
    cmd.get_arguments().find(|a| a.get_long() == Some(long.as_str()))
}

fn given_on_command_line(args: &[OsString], arg: &Arg) -> bool {
    let long = arg.get_long().map(|l| format!("--{l}"));
    let short = arg.get_short().map(|s| format!("-{s}"));
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        long.as_ref()
            .is_some_and(|l| a == l.as_str() || a.starts_with(&format!("{l}=")))
            || short.as_ref().is_some_and(|s| a.starts_with(s.as_str()))
    })
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

fn to_flags(arg: &Arg, key: &str, v: &Value) -> Result<Vec<OsString>, UsageError> {
    let long = arg.get_long().unwrap_or(key);
    let bad = || UsageError(format!("config key `{key}` has an unsupported value"));
    match (arg.get_action(), v) {
        (ArgAction::SetTrue, Value::Boolean(b)) => Ok(if *b { vec![format!("--{long}").into()] } else { vec![] }),
        (ArgAction::Count, Value::Integer(n)) => Ok((0..*n).map(|_| format!("--{long}").into()).collect()),
        (_, Value::Array(items)) => items
            .iter()
            .map(|i| scalar(i).map(|s| format!("--{long}={s}").into()).ok_or_else(bad))
            .collect(),
        (_, v) => Ok(vec![format!("--{long}={}", scalar(v).ok_or_else(bad)?).into()]),
    }
}

/// Returns `argv` with config values spliced in, or unchanged when no
/// `--config` is given.
pub fn expand(argv: Vec<OsString>, root: &Command) -> Result<Vec<OsString>, UsageError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;

    let (cmds, at) = subcommand_path(&argv, root);
    let leaf = *cmds.last().unwrap();
    let user_args = &argv[at + 1..];

    // shallow to deep; deeper tables override
    let mut levels: Vec<(&Table, bool)> = vec![(&table, cmds.len() == 1)];
    let mut cur = &table;
    for (depth, cmd) in cmds.iter().enumerate().skip(1) {
        match cur.get(cmd.get_name()) {
            Some(Value::Table(t)) => {
                levels.push((t, depth == cmds.len() - 1));
                cur = t;
            }
            Some(_) => return Err(UsageError(format!("config key `{}` must be a table", cmd.get_name()))),
            None => break,
        }
    }

    let mut chosen: Vec<(String, &Value)> = Vec::new();
    for (t, is_leaf) in levels {
        for (k, v) in t {
            if matches!(v, Value::Table(_)) || k == "config" {
                continue;
            }
            if find_arg(leaf, k).is_none() {
                if is_leaf {
                    return Err(UsageError(format!(
                        "config key `{k}` is not a flag of `{}`",
                        leaf.get_bin_name().unwrap_or(leaf.get_name())
                    )));
                }
                continue;
            }
            chosen.retain(|(c, _)| c != k);
            chosen.push((k.clone(), v));
        }
    }

    let mut extra = Vec::new();
    for (k, v) in chosen {
        let arg = find_arg(leaf, &k).unwrap();
        if !given_on_command_line(user_args, arg) {
            extra.extend(to_flags(arg, &k, v)?);
        }
    }
    let mut out = argv[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}
