//! The `cafkt` command line: `pretrain`, `federate`, `eval` and `partition`.
//!
//! Configuration comes from an optional `--config` file, then `--set
//! key=value` overrides (also accepted as `--key value` for dotted keys).
//! The output directory is `--out`, else `$CAFKT_OUT_DIR`, else `run.out_dir`.

pub mod checkpoint;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_feature_file, mean_client_label_entropy};
use crate::distill::{alignment_report, append_embeddings, pretrain};
use crate::error::{Error, Result};
use crate::eval::{concat_classifiers, weight_self_similarity, PathEvaluator};
use crate::model::{l2_normalize, student_embed, teacher_embed, ClassifierWeights, FeatureBatch, NORMALIZE_EPS};
use crate::pipeline::{build_encoders, federate_domain, generate_domains, partition_domain, pooled_public, DomainData, ExperimentConfig};
use crate::privacy::median_norm;

pub use checkpoint::{Checkpoint, ModelBundle};
pub use config::{Init, RunConfig, Switch};

pub const OUT_DIR_ENV: &str = "CAFKT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cafkt", version, about = "Cross-architecture federated knowledge transfer on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file with `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distill the teacher into student + translator and fit the decoder.
    Pretrain(Common),
    /// Train the decoder federatedly, starting from a pretraining checkpoint.
    Federate {
        #[command(flatten)]
        common: Common,
        /// Pretraining checkpoint (default: federation.checkpoint, then <out>/pretrain.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on the validation split, or concatenate per-domain decoders.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score (default <out>/federated.ckpt).
        #[arg(long, conflicts_with = "concat")]
        checkpoint: Option<PathBuf>,
        /// Domain whose validation split scores `--checkpoint`.
        #[arg(long, default_value_t = 0, conflicts_with = "concat")]
        domain: usize,
        /// Per-domain checkpoints, in domain order.
        #[arg(long, num_args = 1..)]
        concat: Vec<PathBuf>,
    },
    /// Write the per-client class counts of the Dirichlet partition.
    Partition(Common),
}

/// Process exit code for an error: 1 for input and configuration problems,
/// 2 for numerical failures, 3 for shape mismatches.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Dimension { .. } | Error::Label { .. } => 3,
        Error::Numeric(_) | Error::AllRoundsSkipped { .. } => 2,
        _ => 1,
    }
}

/// Rewrites `--section.key value` and `--section.key=value` into `--set section.key=value`.
fn expand_dotted(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        if !flag.split('=').next().unwrap_or("").contains('.') {
            out.push(a);
            continue;
        }
        let assignment = if flag.contains('=') {
            flag.to_string()
        } else {
            match it.next() {
                Some(v) => format!("{flag}={v}"),
                None => flag.to_string(),
            }
        };
        out.push("--set".into());
        out.push(assignment);
    }
    out
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> Result<()> {
    let cli = match Cli::try_parse_from(expand_dotted(args.into_iter().collect())) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    match cli.command {
        Command::Pretrain(common) => cmd_pretrain(&Session::new(&common)?),
        Command::Federate { common, checkpoint } => cmd_federate(&Session::new(&common)?, checkpoint),
        Command::Eval {
            common,
            checkpoint,
            domain,
            concat,
        } => {
            let s = Session::new(&common)?;
            if concat.is_empty() {
                cmd_eval(&s, checkpoint, domain)
            } else {
                cmd_eval_concat(&s, &concat)
            }
        }
        Command::Partition(common) => cmd_partition(&Session::new(&common)?),
    }
}

struct Session {
    cfg: RunConfig,
    out: PathBuf,
}

impl Session {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for s in &common.set {
            cfg.apply_override(s)?;
        }
        let out = common
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| cfg.out_dir.clone());
        cfg.out_dir = out.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Resolved experiment plus its data; feature files replace the synthetic generator.
    fn experiment_and_data(&self) -> Result<(ExperimentConfig, Vec<DomainData>)> {
        let mut exp = self.cfg.experiment()?;
        if !self.cfg.uses_feature_files() {
            let data = generate_domains(&exp)?;
            return Ok((exp, data));
        }
        if self.cfg.domains != 1 {
            return Err(Error::Config("feature files support a single domain (data.domains = 1)".into()));
        }
        let (Some(train_path), Some(val_path)) = (&self.cfg.train_file, &self.cfg.val_file) else {
            return Err(Error::Config("data.train_file and data.val_file must be given together".into()));
        };
        let (train, c) = load_feature_file(train_path)?;
        let (val, c_val) = load_feature_file(val_path)?;
        let public = match &self.cfg.public_file {
            Some(p) => load_feature_file(p)?,
            None => (FeatureBatch::empty(train.dim()), c),
        };
        for (batch, classes) in [(&val, c_val), (&public.0, public.1)] {
            if classes != c {
                return Err(Error::dim("class count across feature files", c, classes));
            }
            if !batch.is_empty() && batch.dim() != train.dim() {
                return Err(Error::dim("feature dim across feature files", train.dim(), batch.dim()));
            }
        }
        exp.domains[0].num_classes = c;
        exp.domains[0].input_dim = train.dim();
        Ok((exp, vec![DomainData { train, val, public: public.0 }]))
    }

    fn manifest(&self, command: &str, outputs: &[String]) -> Result<()> {
        let text = output::manifest(command, &self.cfg.entries(), outputs);
        output::write(&self.path("run.json"), &text)
    }
}

fn domain_suffix(domains: usize, k: usize) -> String {
    if domains == 1 {
        String::new()
    } else {
        format!("_d{k}")
    }
}

fn pooled_validation(exp: &ExperimentConfig, data: &[DomainData]) -> Result<FeatureBatch> {
    let val: Vec<DomainData> = data
        .iter()
        .map(|d| DomainData {
            train: FeatureBatch::empty(d.val.dim()),
            val: FeatureBatch::empty(d.val.dim()),
            public: d.val.clone(),
        })
        .collect();
    pooled_public(&val, &exp.class_blocks())
}

fn cmd_pretrain(s: &Session) -> Result<()> {
    let (exp, data) = s.experiment_and_data()?;
    let input_dim = exp.input_dim()?;
    let enc = build_encoders(&exp.model, input_dim, exp.total_classes(), exp.seed())?;
    let public = pooled_public(&data, &exp.class_blocks())?;
    if public.is_empty() {
        return Err(Error::Config("pretraining needs data.public_file when feature files are used".into()));
    }
    let val = pooled_validation(&exp, &data)?;
    let outcome = pretrain(&enc.teacher, &enc.student, &enc.translator, &enc.classifier, &public, &exp.pretrain, Some(&val))?;

    let bundle = ModelBundle {
        teacher: enc.teacher.clone(),
        student: outcome.student.clone().unwrap_or(enc.student.clone()),
        translator: outcome.translator.clone(),
        classifier: outcome.classifier.clone(),
    };
    Checkpoint::from_bundle(&bundle).save(&s.path("pretrain.ckpt"))?;
    output::write(&s.path("pretrain_history.csv"), &output::history_csv(&outcome.history))?;

    let emb = s.path("embeddings.txt");
    if emb.exists() {
        std::fs::remove_file(&emb).map_err(|e| Error::io(&emb, e))?;
    }
    for (k, d) in data.iter().enumerate() {
        let o = l2_normalize(&teacher_embed(&bundle.teacher, &d.val)?, NORMALIZE_EPS)?;
        let f = l2_normalize(&student_embed(&bundle.student, &bundle.translator, &d.val)?, NORMALIZE_EPS)?;
        append_embeddings(&emb, &format!("d{k}_val_teacher"), &o, &d.val.labels)?;
        append_embeddings(&emb, &format!("d{k}_val_student"), &f, &d.val.labels)?;
    }

    let align = alignment_report(&bundle.teacher, &bundle.student, &bundle.translator, &val)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "pretrain: {} epochs, final KD {:.6} (l1 {:.6}, l2 {:.6}, cos {:.6}), CE {:.6}",
            last.epoch,
            last.loss.kd_total(),
            last.loss.l1_term,
            last.loss.l2_term,
            last.loss.cos_term,
            last.loss.ce_term
        );
        if let (Some(c), Some(sv)) = (last.client, last.server) {
            println!("validation top-1: client {:.4}, server {:.4}", c.top1, sv.top1);
        }
    }
    println!("alignment: mean cosine {:.6}, mean l2 {:.6}", align.mean_cosine, align.mean_l2);
    s.manifest(
        "pretrain",
        &["pretrain.ckpt", "pretrain_history.csv", "embeddings.txt"].map(String::from),
    )
}

fn checkpoint_path(s: &Session, flag: Option<PathBuf>, default_name: &str) -> PathBuf {
    flag.or_else(|| s.cfg.checkpoint.clone()).unwrap_or_else(|| s.path(default_name))
}

fn load_bundle(s: &Session, path: &Path) -> Result<ModelBundle> {
    Checkpoint::load(path)?.bundle(&path.display().to_string(), s.cfg.model.nonlinearity)
}

fn check_bundle(bundle: &ModelBundle, exp: &ExperimentConfig) -> Result<()> {
    let input_dim = exp.input_dim()?;
    if bundle.teacher.in_dim() != input_dim {
        return Err(Error::dim("checkpoint encoder input vs data.input_dim", input_dim, bundle.teacher.in_dim()));
    }
    if bundle.classifier.num_classes() != exp.total_classes() {
        return Err(Error::dim("checkpoint classes vs configured classes", exp.total_classes(), bundle.classifier.num_classes()));
    }
    Ok(())
}

fn cmd_federate(s: &Session, checkpoint: Option<PathBuf>) -> Result<()> {
    let (exp, data) = s.experiment_and_data()?;
    let bundle = match s.cfg.init {
        Init::Random => {
            let enc = build_encoders(&exp.model, exp.input_dim()?, exp.total_classes(), exp.seed())?;
            ModelBundle {
                teacher: enc.teacher,
                student: enc.student,
                translator: enc.translator,
                classifier: enc.classifier,
            }
        }
        Init::Pretrained => load_bundle(s, &checkpoint_path(s, checkpoint, "pretrain.ckpt"))?,
    };
    check_bundle(&bundle, &exp)?;

    let n = exp.domains.len();
    let mut outputs = Vec::new();
    for (k, block) in exp.class_blocks().into_iter().enumerate() {
        let rows: Vec<usize> = block.collect();
        let initial = ClassifierWeights::new(bundle.classifier.weight.select_rows(&rows))?;
        let mut eval = PathEvaluator::new(&bundle.teacher, &bundle.student, &bundle.translator, &data[k].val, NORMALIZE_EPS)?;
        eval.every = exp.eval_every;
        eval.total_rounds = exp.federation.rounds;
        let result = federate_domain(
            &exp,
            &bundle.teacher,
            &bundle.student,
            &bundle.translator,
            &data[k],
            k,
            &initial,
            Some(&mut eval),
        )?;

        let sfx = domain_suffix(n, k);
        let names = [
            format!("metrics{sfx}.csv"),
            format!("federated{sfx}.ckpt"),
            format!("confusion{sfx}.txt"),
            format!("similarity{sfx}.txt"),
            format!("round_details{sfx}.csv"),
        ];
        output::write(&s.path(&names[0]), &output::metrics_csv(&result.metrics))?;
        Checkpoint::from_bundle(&ModelBundle {
            classifier: result.decoder.clone(),
            ..bundle.clone()
        })
        .save(&s.path(&names[1]))?;
        output::write(&s.path(&names[4]), &output::round_details_csv(&result.metrics))?;
        if let Some(conf) = &result.metrics.confusion {
            output::write(&s.path(&names[2]), &output::count_matrix_text(conf))?;
        }
        let sim = result
            .metrics
            .self_similarity
            .clone()
            .unwrap_or_else(|| weight_self_similarity(&result.decoder));
        output::write(&s.path(&names[3]), &output::real_matrix_text(&sim))?;
        outputs.extend(names);

        let last = result.metrics.last().expect("at least one round ran");
        let skipped = result.metrics.rounds.len() - result.metrics.successful_rounds();
        print!("domain {k}: {} rounds ({skipped} skipped)", result.metrics.rounds.len());
        if let (Some(c), Some(sv)) = (last.client, last.server) {
            print!(
                ", client top-1 {:.4} top-5 {:.4}, server top-1 {:.4} top-5 {:.4}",
                c.top1, c.top5, sv.top1, sv.top5
            );
        }
        println!();
        if let Some(m) = median_norm(&result.metrics.update_norms) {
            println!("domain {k}: median client update norm {m:.6}");
        }
    }
    s.manifest("federate", &outputs)
}

fn cmd_eval(s: &Session, checkpoint: Option<PathBuf>, domain: usize) -> Result<()> {
    let (exp, data) = s.experiment_and_data()?;
    let path = checkpoint.unwrap_or_else(|| s.path("federated.ckpt"));
    let bundle = load_bundle(s, &path)?;
    let d = data
        .get(domain)
        .ok_or_else(|| Error::Config(format!("--domain {domain} but only {} domains configured", data.len())))?;
    let expected = exp.domains[domain].num_classes;
    if bundle.classifier.num_classes() != expected {
        return Err(Error::dim("checkpoint classes vs domain classes", expected, bundle.classifier.num_classes()));
    }
    let eval = PathEvaluator::new(&bundle.teacher, &bundle.student, &bundle.translator, &d.val, NORMALIZE_EPS)?;
    let c = eval.client(&bundle.classifier)?;
    let sv = eval.server(&bundle.classifier)?;
    println!("client top-1 {:.4} top-5 {:.4}", c.top1, c.top5);
    println!("server top-1 {:.4} top-5 {:.4}", sv.top1, sv.top5);
    output::write(&s.path("eval_confusion.txt"), &output::count_matrix_text(&eval.confusion(&bundle.classifier)?))?;
    let csv = format!(
        "path,top1,top5\nclient,{},{}\nserver,{},{}\n",
        c.top1, c.top5, sv.top1, sv.top5
    );
    output::write(&s.path("eval.csv"), &csv)?;
    s.manifest("eval", &["eval.csv", "eval_confusion.txt"].map(String::from))
}

fn cmd_eval_concat(s: &Session, paths: &[PathBuf]) -> Result<()> {
    let (exp, data) = s.experiment_and_data()?;
    if paths.len() != data.len() {
        return Err(Error::Config(format!(
            "{} checkpoints given but data.domains = {}",
            paths.len(),
            data.len()
        )));
    }
    let bundles = paths.iter().map(|p| load_bundle(s, p)).collect::<Result<Vec<_>>>()?;
    let first = &bundles[0];
    for (b, p) in bundles.iter().zip(paths).skip(1) {
        if b.teacher != first.teacher || b.student != first.student || b.translator != first.translator {
            return Err(Error::Config(format!(
                "{} was not produced from the same pretraining run as {}",
                p.display(),
                paths[0].display()
            )));
        }
    }
    for (k, b) in bundles.iter().enumerate() {
        if b.classifier.num_classes() != exp.domains[k].num_classes {
            return Err(Error::dim("checkpoint classes vs domain classes", exp.domains[k].num_classes, b.classifier.num_classes()));
        }
    }
    let decoders: Vec<ClassifierWeights> = bundles.iter().map(|b| b.classifier.clone()).collect();
    let concat = concat_classifiers(&decoders)?;
    let mut csv = String::from("domain,server_specific,server_agnostic,client_specific,client_agnostic\n");
    for (k, d) in data.iter().enumerate() {
        let eval = PathEvaluator::new(&first.teacher, &first.student, &first.translator, &d.val, NORMALIZE_EPS)?;
        let sv = concat.domain_accuracy(k, &eval.server_features, &eval.labels)?;
        let cl = concat.domain_accuracy(k, &eval.client_features, &eval.labels)?;
        println!(
            "domain {k}: server specific {:.4} agnostic {:.4} | client specific {:.4} agnostic {:.4}",
            sv.specific_top1, sv.agnostic_top1, cl.specific_top1, cl.agnostic_top1
        );
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            sv.specific_top1, sv.agnostic_top1, cl.specific_top1, cl.agnostic_top1
        ));
    }
    output::write(&s.path("eval_concat.csv"), &csv)?;
    s.manifest("eval", &["eval_concat.csv".to_string()])
}

fn cmd_partition(s: &Session) -> Result<()> {
    let (exp, data) = s.experiment_and_data()?;
    let mut outputs = Vec::new();
    for (k, d) in data.iter().enumerate() {
        let part = partition_domain(&exp, k, &d.train)?;
        let c = exp.domains[k].num_classes;
        let counts = part.class_client_counts(&d.train.labels, c);
        let name = format!("partition{}.csv", domain_suffix(data.len(), k));
        output::write(&s.path(&name), &output::partition_csv(&counts, part.num_clients))?;
        let sizes = part.client_sizes();
        println!(
            "domain {k}: {} samples over {} clients (min {}, max {}), mean client label entropy {:.4} nats",
            d.train.len(),
            part.num_clients,
            sizes.iter().min().copied().unwrap_or(0),
            sizes.iter().max().copied().unwrap_or(0),
            mean_client_label_entropy(&part, &d.train.labels, c)
        );
        outputs.push(name);
    }
    s.manifest("partition", &outputs)
}
