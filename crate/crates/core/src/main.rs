use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tapaudit::catalog::ChannelCatalog;
use tapaudit::corpus::{
    classify_specificity, load_descriptors, load_ifttt_csv, load_rule_set, run_audit, split_train_test,
    write_ifttt_csv, AuditOptions, ChannelPrecedence, CorpusRecord, LoadOptions,
};
use tapaudit::detector::{detect_all, DetectOptions, DEFAULT_MAX_CHAIN_LEN};
use tapaudit::extraction::{
    evaluate_accuracy, extract_rule, read_predictions, write_predictions, ExtractionPrediction, Group, ServiceLexicon,
};
use tapaudit::ident::{
    parse_truth_label, score_identification, serialize_predictions, ChannelIdentifier, ChannelLexicon,
    LexiconIdentifier,
};
use tapaudit::remote::{RemoteConfig, RemoteIdentifier};
use tapaudit::report::{render_evaluation, render_report_at, EvaluationRow, ReportFormat};

#[derive(Parser)]
#[command(
    name = "tapaudit",
    version,
    about = "Audit trigger-action rules for physical inter-rule vulnerabilities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baseline extractor over a corpus and write a predictions file.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// Service alias lexicon; defaults to the corpus' own titles.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Score a predictions file against a corpus.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        group: GroupArg,
        #[arg(long, default_value = "text")]
        format: FormatArg,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Identify environment channels for descriptions, one per input line.
    Identify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "lexicon")]
        backend: Backend,
        /// Channel cue lexicon for the lexicon backend.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Truth labels, one channel name or `None` per line; prints accuracy to stderr.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect chains and interference among rules.
    Audit {
        /// App descriptor JSON.
        #[arg(long, conflicts_with = "rules", required_unless_present = "rules")]
        descriptors: Option<PathBuf>,
        /// Rule-set CSV.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Service effect catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Exclude rules with an unspecified location.
        #[arg(long)]
        strict_location: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_CHAIN_LEN)]
        max_chain_len: usize,
        #[arg(long, default_value = "text")]
        format: FormatArg,
        #[arg(long, default_value = "catalog")]
        precedence: PrecedenceArg,
        /// Stamp the report with the current time.
        #[arg(long)]
        timestamp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a corpus into train and test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
    },
}

#[derive(clap::Args)]
struct LoadArgs {
    /// Separator placed between title and description.
    #[arg(long, default_value = " ")]
    separator: String,
    /// Keep rows the English-text filter would drop.
    #[arg(long)]
    keep_noise: bool,
}

impl LoadArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            separator: self.separator.clone(),
            filter_noise: !self.keep_noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Specific,
    Vague,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Structured,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Structured => ReportFormat::Structured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Lexicon,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecedenceArg {
    Catalog,
    Descriptor,
    Union,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_corpus(path: &Path, load: &LoadArgs) -> Result<Vec<CorpusRecord>> {
    let loaded = load_ifttt_csv(open(path)?, &load.options()).with_context(|| format!("loading {}", path.display()))?;
    if !loaded.dropped.is_empty() {
        eprintln!("dropped {} noise rows from {}", loaded.dropped.len(), path.display());
    }
    Ok(loaded.records)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Extract {
            corpus,
            lexicon,
            out,
            load,
        } => {
            let records = load_corpus(&corpus, &load)?;
            let lexicon = match lexicon {
                Some(p) => ServiceLexicon::load(&read_to_string(&p)?)?,
                None => ServiceLexicon::self_aliased(
                    records
                        .iter()
                        .flat_map(|r| [r.truth_trigger_title.as_str(), r.truth_action_title.as_str()]),
                ),
            };
            if lexicon.is_empty() && !records.is_empty() {
                bail!("service lexicon is empty");
            }
            let predictions: Vec<ExtractionPrediction> = records
                .iter()
                .map(|r| extract_rule(&r.record_id, &r.joined_text, &lexicon))
                .collect();
            let mut w = output(out.as_deref())?;
            write_predictions(&mut w, &predictions)?;
            w.flush()?;
        }
        Command::Evaluate {
            predictions,
            corpus,
            group,
            format,
            load,
        } => {
            let records = load_corpus(&corpus, &load)?;
            let predictions = read_predictions(open(&predictions)?)?;
            // validate the full pairing before filtering into groups
            let truth: Vec<_> = records.iter().map(CorpusRecord::truth).collect();
            evaluate_accuracy(&predictions, &truth)?;

            let groups: &[(Group, &str)] = match group {
                GroupArg::Specific => &[(Group::Specific, "specific")],
                GroupArg::Vague => &[(Group::Vague, "vague")],
                GroupArg::All => &[
                    (Group::Specific, "specific"),
                    (Group::Vague, "vague"),
                    (Group::All, "all"),
                ],
            };
            let mut rows = Vec::new();
            for &(g, name) in groups {
                let keep: Vec<&CorpusRecord> = records.iter().filter(|r| g.admits(classify_specificity(r))).collect();
                let ids: std::collections::HashSet<&str> = keep.iter().map(|r| r.record_id.as_str()).collect();
                let truth: Vec<_> = keep.iter().map(|r| r.truth()).collect();
                let preds: Vec<_> = predictions
                    .iter()
                    .filter(|p| ids.contains(p.record_id.as_str()))
                    .cloned()
                    .collect();
                rows.push(EvaluationRow::new(name, evaluate_accuracy(&preds, &truth)?));
            }
            io::stdout().write_all(&render_evaluation(&rows, format.into()).body)?;
        }
        Command::Identify {
            input,
            backend,
            lexicon,
            truth,
            out,
        } => {
            let descriptions: Vec<String> = read_to_string(&input)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let identifier: Box<dyn ChannelIdentifier> = match backend {
                Backend::Lexicon => Box::new(match lexicon {
                    Some(p) => LexiconIdentifier::new(ChannelLexicon::load(&read_to_string(&p)?)?),
                    None => LexiconIdentifier::default(),
                }),
                Backend::Remote => Box::new(RemoteIdentifier::new(RemoteConfig::from_env()?)?),
            };
            let predictions = identifier.identify_batch(&descriptions)?;
            let mut w = output(out.as_deref())?;
            w.write_all(serialize_predictions(&predictions).as_bytes())?;
            w.flush()?;
            if let Some(truth) = truth {
                let labels = read_to_string(&truth)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(parse_truth_label)
                    .collect::<Result<Vec<_>, _>>()?;
                let acc = score_identification(&predictions, &labels)?;
                eprintln!("accuracy: {:.2}% ({} descriptions)", 100.0 * acc, labels.len());
            }
        }
        Command::Audit {
            descriptors,
            rules,
            catalog,
            strict_location,
            max_chain_len,
            format,
            precedence,
            timestamp,
            out,
        } => {
            if max_chain_len == 0 {
                bail!("--max-chain-len must be positive");
            }
            let catalog = match catalog {
                Some(p) => {
                    ChannelCatalog::load(&read_to_string(&p)?).with_context(|| format!("loading {}", p.display()))?
                }
                None => ChannelCatalog::new(),
            };
            let detect = DetectOptions {
                strict_location,
                max_chain_len,
            };
            let report = match (descriptors, rules) {
                (Some(d), _) => {
                    let apps = load_descriptors(open(&d)?).with_context(|| format!("loading {}", d.display()))?;
                    let precedence = match precedence {
                        PrecedenceArg::Catalog => ChannelPrecedence::Catalog,
                        PrecedenceArg::Descriptor => ChannelPrecedence::Descriptor,
                        PrecedenceArg::Union => ChannelPrecedence::Union,
                    };
                    run_audit(&apps, &catalog, &AuditOptions { detect, precedence })?
                }
                (None, Some(r)) => {
                    let set = load_rule_set(open(&r)?).with_context(|| format!("loading {}", r.display()))?;
                    detect_all(set.rules(), &catalog, &detect)?
                }
                (None, None) => unreachable!("clap enforces one input"),
            };
            let stamp = timestamp
                .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()))
                .transpose()?;
            let rendered = render_report_at(&report, format.into(), stamp);
            let mut w = output(out.as_deref())?;
            w.write_all(&rendered.body)?;
            w.flush()?;
        }
        Command::Split {
            corpus,
            test_fraction,
            seed,
            train_out,
            test_out,
            load,
        } => {
            let records = load_corpus(&corpus, &load)?;
            let (train, test) = split_train_test(&records, test_fraction, seed)?;
            write_ifttt_csv(File::create(&train_out)?, &train)?;
            write_ifttt_csv(File::create(&test_out)?, &test)?;
            eprintln!("train: {} records, test: {} records", train.len(), test.len());
        }
    }
    Ok(())
}
