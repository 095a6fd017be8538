//! Argument surface. Every configuration key is also a `--kebab-case` flag
//! on the commands that read it.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::config::CONFIG_ENV;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    BuildKg,
    Train,
    Eval,
    Predict,
    Synth,
    Gradcheck,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::BuildKg,
        CommandKind::Train,
        CommandKind::Eval,
        CommandKind::Predict,
        CommandKind::Synth,
        CommandKind::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandKind::BuildKg => "build-kg",
            CommandKind::Train => "train",
            CommandKind::Eval => "eval",
            CommandKind::Predict => "predict",
            CommandKind::Synth => "synth",
            CommandKind::Gradcheck => "gradcheck",
        }
    }

    fn about(self) -> &'static str {
        match self {
            CommandKind::BuildKg => "Build the knowledge graph from an annotation file and print triple counts",
            CommandKind::Train => "Train a scorer on the train fold and write the best checkpoint",
            CommandKind::Eval => "Evaluate a checkpoint on one fold and write an AUC report",
            CommandKind::Predict => "Score every finding for each input image and write a prediction CSV",
            CommandKind::Synth => "Generate a synthetic feature file and annotation file",
            CommandKind::Gradcheck => "Compare analytic gradients with central finite differences",
        }
    }

    fn mask(self) -> u8 {
        1 << (self as u8)
    }
}

const B: u8 = 1 << 0;
const T: u8 = 1 << 1;
const E: u8 = 1 << 2;
const P: u8 = 1 << 3;
const S: u8 = 1 << 4;
const G: u8 = 1 << 5;

/// `(key, value name, help, commands)`
const KEYS: &[(&str, &str, &str, u8)] = &[
    (
        "features",
        "PATH",
        "Feature CSV (`id,f0,f1,...`); written by synth",
        T | E | P | S,
    ),
    (
        "annotations",
        "PATH",
        "Annotation CSV (`id,<finding>...[,group]`); written by synth",
        B | T | E | P | S,
    ),
    ("checkpoint", "PATH", "Model checkpoint", T | E | P),
    ("output", "PATH", "Output file", B | E | P),
    (
        "history",
        "PATH",
        "Training history file [default: <checkpoint>.history.tsv]",
        T,
    ),
    ("scorer", "KIND", "Scoring function: distmult or conve", T | G),
    ("embed_dim", "N", "Embedding dimension d", T | G),
    ("channels", "N", "ConvE convolution channels", T | G),
    (
        "policy",
        "POLICY",
        "Uncertain-label policy: positive, negative or separate",
        B | T | E,
    ),
    ("cooccurrence", "BOOL", "Add coOccurs edges between findings", B | T),
    (
        "cooccurrence_threshold",
        "P",
        "Conditional-probability threshold for coOccurs (strict)",
        B | T,
    ),
    ("train_ratio", "R", "Train fraction of the split", B | T | E | P),
    ("val_ratio", "R", "Validation fraction of the split", B | T | E | P),
    ("test_ratio", "R", "Test fraction of the split", B | T | E | P),
    ("split_seed", "SEED", "Seed of the grouped split", B | T | E | P),
    ("fold", "FOLD", "Fold to read: train, val, test or all", B | E | P),
    (
        "eval_findings",
        "NAMES",
        "Comma-separated findings to evaluate [default: all]",
        E,
    ),
    (
        "threshold",
        "TAU",
        "Decision threshold in (0, 1) for binary labels",
        E | P,
    ),
    ("learning_rate", "LR", "Optimizer step size", T),
    ("epochs", "N", "Maximum number of epochs", T),
    ("batch_size", "N", "Subjects per minibatch", T),
    ("optimizer", "NAME", "adam or sgd", T),
    (
        "seed",
        "SEED",
        "Seed for initialisation, shuffling and synthesis",
        T | S | G,
    ),
    ("patience", "N", "Epochs without validation gain before stopping", T),
    ("synth_images", "N", "Synthetic images", S),
    ("synth_findings", "N", "Synthetic findings", S),
    ("synth_dim", "N", "Synthetic feature dimension", S),
    (
        "synth_prototype_scale",
        "X",
        "Standard deviation of finding prototypes",
        S,
    ),
    ("synth_noise", "X", "Standard deviation of additive feature noise", S),
    ("synth_sparsity", "P", "Probability that a finding is present", S),
    (
        "synth_uncertain",
        "P",
        "Fraction of positive labels rewritten as uncertain",
        S,
    ),
    ("gradcheck_dim", "N", "Feature dimension D of the checked models", G),
    ("gradcheck_seeds", "N", "Number of consecutive seeds to check", G),
    ("gradcheck_tolerance", "EPS", "Maximum relative error", G),
];

pub fn command() -> Command {
    let mut app = Command::new("radkg")
        .about("Multi-label image classification as knowledge-graph link prediction")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help(format!("`key = value` configuration file [env: {CONFIG_ENV}]")),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("Increase log verbosity"),
        );
    for kind in CommandKind::ALL {
        let mut sub = Command::new(kind.name()).about(kind.about()).args_override_self(true);
        for (key, value_name, help, mask) in KEYS {
            if mask & kind.mask() == 0 {
                continue;
            }
            let mut arg = Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name(*value_name)
                .help(*help);
            if *key == "cooccurrence" {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            sub = sub.arg(arg);
        }
        if kind == CommandKind::Gradcheck {
            sub = sub.arg(
                Arg::new("corrupt_gradient")
                    .long("corrupt-gradient")
                    .action(ArgAction::SetTrue)
                    .hide(true),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: CommandKind,
    pub config_path: Option<PathBuf>,
    pub verbose: u8,
    /// Flags given on the command line, as `(key, raw value)`.
    pub overrides: Vec<(String, String)>,
    pub corrupt_gradient: bool,
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter(|(key, ..)| m.try_contains_id(key).unwrap_or(false))
        .filter(|(key, ..)| m.value_source(key) == Some(ValueSource::CommandLine))
        .filter_map(|(key, ..)| {
            let raw = m.get_raw(key)?;
            let value = raw
                .map(|v| v.to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join(",");
            Some((key.to_string(), value))
        })
        .collect()
}

pub fn parse<I, T>(args: I) -> Result<Invocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = CommandKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .expect("registered subcommand");
    Ok(Invocation {
        command,
        config_path: sub.get_one::<String>("config").map(PathBuf::from),
        verbose: sub.get_count("verbose"),
        overrides: overrides(sub),
        corrupt_gradient: command == CommandKind::Gradcheck && sub.get_flag("corrupt_gradient"),
    })
}
