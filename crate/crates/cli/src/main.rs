mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use vexrec::attention::{attention_map, Heatmap};
use vexrec::checkpoint;
use vexrec::data::{
    encode_reviews, generate_synthetic, load_interactions, load_region_labels, load_reviews, resolve_region_labels,
    split_per_user, write_interactions, write_region_labels, write_reviews, InteractionSet, RawRegionLabel,
    RegionalFeatureStore, Review, SplitPlan, SynthConfig, Vocabulary,
};
use vexrec::eval::{evaluate, recommend_for_user, EvalInputs};
use vexrec::gradcheck::{run_gradcheck, GradcheckOptions};
use vexrec::gru::{greedy_decode, ReviewInputs};
use vexrec::params::{ModelParams, ParamGroup, Variant};
use vexrec::trainer::{ReviewIndex, TrainData, Trainer};
use vexrec::vecf::PairForward;

use crate::config::{require_files, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "vexrec", version, about = "Visually explainable recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. --set epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a per-epoch CSV log
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print top-n recommendations as `user item rank score`
    Recommend {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Raw user id; repeatable
        #[arg(long = "user", required = true)]
        users: Vec<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Export the attention heatmap of a (user, item) pair as JSON and PGM
    Explain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Directory for the output files (default: output_dir)
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Greedily decode a review for a (user, item) pair
    GenerateReview {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Compute ranking, ROUGE and region metrics on the held-out split
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare analytic and finite-difference gradients per parameter group
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value = "re-vecf")]
        variant: Variant,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Flip the sign of one group's analytic gradient (P, Q, W_img_proj, attention, gru, context_gate, W_out)
        #[arg(long, value_name = "GROUP")]
        inject_fault: Option<ParamGroup>,
    },
    /// Write a planted-preference synthetic dataset and a matching run.conf
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        users: usize,
        #[arg(long, default_value_t = 60)]
        items: usize,
        #[arg(long, default_value_t = 16)]
        regions: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 24)]
        vocab: usize,
        #[arg(long, default_value_t = 2)]
        archetypes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<vexrec::Error>(), Some(vexrec::Error::Numerical(_))));
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_CONFIG })
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("VEXREC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("VEXREC_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { cfg } => cmd_train(&load_config(&cfg)?),
        Command::Recommend { cfg, users, n } => cmd_recommend(&load_config(&cfg)?, &users, n),
        Command::Explain {
            cfg,
            user,
            item,
            top_k,
            out_dir,
        } => cmd_explain(&load_config(&cfg)?, &user, &item, top_k, out_dir),
        Command::GenerateReview {
            cfg,
            user,
            item,
            max_len,
        } => cmd_generate_review(&load_config(&cfg)?, &user, &item, max_len),
        Command::Evaluate { cfg } => cmd_evaluate(&load_config(&cfg)?),
        Command::Gradcheck {
            seeds,
            variant,
            tolerance,
            inject_fault,
        } => cmd_gradcheck(seeds, variant, tolerance, inject_fault),
        Command::Synth {
            out,
            users,
            items,
            regions,
            dim,
            vocab,
            archetypes,
            seed,
        } => cmd_synth(
            &out,
            &SynthConfig {
                users,
                items,
                regions,
                dim,
                vocab_size: vocab,
                archetypes,
                seed,
                ..SynthConfig::default()
            },
        ),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Inputs shared by every data-driven command.
struct Loaded {
    interactions: InteractionSet,
    split: SplitPlan,
    features: Option<RegionalFeatureStore>,
    vocab: Option<Vocabulary>,
    reviews: Vec<Review>,
}

impl Loaded {
    fn context_dim(&self, cfg: &RunConfig) -> usize {
        self.features.as_ref().map_or(cfg.context_dim, |f| f.dim())
    }
}

/// Checks that every input the variant needs is configured and present.
fn check_inputs(cfg: &RunConfig, variant: Variant) -> Result<()> {
    require_files(&[("interactions", cfg.interactions.as_ref())])?;
    if variant.uses_images() {
        require_files(&[("features", cfg.features.as_ref())])?;
        if let Some(m) = &cfg.feature_manifest {
            require_files(&[("feature_manifest", Some(m))])?;
        }
    }
    if variant.has_text() {
        require_files(&[("reviews", cfg.reviews.as_ref())])?;
    }
    if let Some(l) = &cfg.labels {
        require_files(&[("labels", Some(l))])?;
    }
    Ok(())
}

fn load_data(cfg: &RunConfig, variant: Variant) -> Result<Loaded> {
    check_inputs(cfg, variant)?;
    let path = cfg.interactions.as_ref().expect("checked");
    let (interactions, stats) = load_interactions(path)?;
    info!(
        "{} users, {} items, {} interactions ({} duplicate lines)",
        interactions.num_users(),
        interactions.num_items(),
        interactions.len(),
        stats.duplicates
    );
    let split = split_per_user(&interactions, cfg.split_fraction, cfg.train.seed);
    let features = if variant.uses_images() {
        Some(load_features(cfg, &interactions)?)
    } else {
        None
    };
    let (vocab, reviews) = if variant.has_text() {
        let raw = load_reviews(cfg.reviews.as_ref().expect("checked"))?;
        let vocab = Vocabulary::build(raw.iter().map(|r| r.tokens.iter().map(String::as_str)), cfg.min_count)?;
        let (reviews, _) = encode_reviews(&raw, &interactions, &vocab);
        info!("{} reviews, vocabulary of {}", reviews.len(), vocab.size());
        (Some(vocab), reviews)
    } else {
        (None, Vec::new())
    };
    Ok(Loaded {
        interactions,
        split,
        features,
        vocab,
        reviews,
    })
}

fn load_features(cfg: &RunConfig, interactions: &InteractionSet) -> Result<RegionalFeatureStore> {
    let path = cfg.features.as_ref().expect("checked");
    let store = RegionalFeatureStore::read(path)?;
    let m = interactions.num_items();
    let Some(manifest) = &cfg.feature_manifest else {
        if store.num_items() != m {
            bail!(
                "feature file has {} items but the interactions name {m}; add a feature_manifest",
                store.num_items()
            );
        }
        return Ok(store);
    };
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split('\t').next().unwrap_or("").trim())
        .collect();
    if rows.len() != store.num_items() {
        bail!("manifest lists {} items, feature file holds {}", rows.len(), store.num_items());
    }
    let mut order = vec![usize::MAX; m];
    for (row, id) in rows.iter().enumerate() {
        if let Some(j) = interactions.items().index_of(id) {
            order[j] = row;
        }
    }
    if let Some(j) = order.iter().position(|&r| r == usize::MAX) {
        bail!("item {} has no row in the feature manifest", interactions.items().id(j));
    }
    Ok(store.reindexed(&order)?)
}

/// Loads the checkpoint and the data it was trained on, checking they agree.
fn load_model(cfg: &RunConfig) -> Result<(ModelParams, Loaded)> {
    let ck = cfg.checkpoint_path();
    require_files(&[("checkpoint", Some(&ck))])?;
    let params = checkpoint::load(&ck)?;
    let data = load_data(cfg, params.variant)?;
    let dims = params.dims;
    if dims.users != data.interactions.num_users() || dims.items != data.interactions.num_items() {
        bail!(
            "checkpoint is {}x{} users x items but the interactions give {}x{}",
            dims.users,
            dims.items,
            data.interactions.num_users(),
            data.interactions.num_items()
        );
    }
    if let Some(f) = &data.features {
        if f.dim() != dims.d || f.regions() != dims.regions {
            bail!("feature grid {}x{} does not match the checkpoint ({}x{})", f.regions(), f.dim(), dims.regions, dims.d);
        }
    }
    if let Some(v) = &data.vocab {
        if v.size() != dims.vocab {
            bail!("vocabulary has {} entries, checkpoint expects {}", v.size(), dims.vocab);
        }
    }
    Ok((params, data))
}

fn cmd_train(cfg: &RunConfig) -> Result<ExitCode> {
    let t = &cfg.train;
    let data = load_data(cfg, t.variant)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let train_reviews: Vec<Review> = data
        .reviews
        .iter()
        .filter(|r| data.split.is_train(r.user, r.item))
        .cloned()
        .collect();
    let index = ReviewIndex::new(&train_reviews);
    let vocab_size = data.vocab.as_ref().map_or(0, Vocabulary::size);
    let end_token = data.vocab.as_ref().map_or(0, Vocabulary::end_index);
    let dims = t.dims(
        data.interactions.num_users(),
        data.interactions.num_items(),
        data.context_dim(cfg),
        data.features.as_ref().map_or(0, |f| f.regions()),
        vocab_size,
    );
    let mut trainer = Trainer::new(
        t.clone(),
        TrainData {
            train: &data.split.train,
            num_items: data.interactions.num_items(),
            features: data.features.as_ref(),
            reviews: &index,
            end_token,
        },
    )?;
    let mut params = trainer.init_params(dims)?;
    info!("training {} for {} epochs ({} parameters)", t.variant, t.epochs, params.num_values());
    let report = trainer.train(&mut params, t.epochs, |s| {
        info!("epoch {:>4}  objective {:.6}  {:.2}s", s.epoch, s.objective, s.seconds);
    })?;
    let csv_path = cfg.output_dir.join("train_report.csv");
    fs::write(&csv_path, report.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    let ck = cfg.checkpoint_path();
    checkpoint::save(&params, &ck)?;
    println!("checkpoint {}", ck.display());
    println!("report {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn user_index(data: &Loaded, id: &str) -> Result<usize> {
    data.interactions
        .users()
        .index_of(id)
        .with_context(|| format!("unknown user {id:?}"))
}

fn item_index(data: &Loaded, id: &str) -> Result<usize> {
    data.interactions
        .items()
        .index_of(id)
        .with_context(|| format!("unknown item {id:?}"))
}

fn cmd_recommend(cfg: &RunConfig, users: &[String], n: Option<usize>) -> Result<ExitCode> {
    let (params, data) = load_model(cfg)?;
    let n = n.unwrap_or(cfg.top_n);
    let mut out = String::new();
    let mut served = 0;
    for id in users {
        let Some(u) = data.interactions.users().index_of(id) else {
            warn!("unknown user {id:?}, skipped");
            continue;
        };
        let exclude = &data.split.train[u];
        let pool = data.interactions.num_items() - exclude.len();
        if n > pool {
            warn!("user {id}: only {pool} candidate items, returning all of them");
        }
        let list = recommend_for_user(&params, data.features.as_ref(), u, exclude, n);
        for (rank, (j, score)) in list.items.iter().zip(&list.scores).enumerate() {
            out.push_str(&format!("{id}\t{}\t{}\t{score:.6}\n", data.interactions.items().id(*j), rank + 1));
        }
        served += 1;
    }
    if served == 0 {
        bail!("none of the requested users is known");
    }
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_explain(cfg: &RunConfig, user: &str, item: &str, top_k: usize, out_dir: Option<PathBuf>) -> Result<ExitCode> {
    let ck = cfg.checkpoint_path();
    require_files(&[("checkpoint", Some(&ck))])?;
    let header = checkpoint::load(&ck)?;
    if !header.variant.uses_images() {
        bail!("variant {} has no image features to explain", header.variant);
    }
    let (params, data) = load_model(cfg)?;
    let (u, j) = (user_index(&data, user)?, item_index(&data, item)?);
    let features = data.features.as_ref().expect("image variant");
    let map = attention_map(
        &params.vecf.user_emb.row(u).to_vec().into(),
        features.item(j),
        &params.vecf.attention,
        u,
        j,
    )?;
    let heatmap = Heatmap::new(&map, user, item, top_k)?;
    let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = format!("heatmap_{}_{}", sanitize(user), sanitize(item));
    let json = heatmap.to_json();
    fs::write(dir.join(format!("{stem}.json")), &json)?;
    fs::write(dir.join(format!("{stem}.pgm")), heatmap.to_pgm())?;
    emit(&format!("{json}\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_generate_review(cfg: &RunConfig, user: &str, item: &str, max_len: Option<usize>) -> Result<ExitCode> {
    let ck = cfg.checkpoint_path();
    require_files(&[("checkpoint", Some(&ck))])?;
    if !checkpoint::load(&ck)?.variant.has_text() {
        bail!("variant has no text model");
    }
    let (params, data) = load_model(cfg)?;
    let (u, j) = (user_index(&data, user)?, item_index(&data, item)?);
    let vocab = data.vocab.as_ref().expect("text variant");
    let max_len = max_len.unwrap_or(cfg.max_review_len);
    if max_len == 0 {
        bail!("max_len must be at least 1");
    }
    let fwd = PairForward::compute(&params, data.features.as_ref(), u, j);
    let v = &params.vecf;
    let tokens = greedy_decode(
        ReviewInputs {
            user: v.user_emb.row(u),
            item: v.item_emb.row(j),
            image: &fwd.image,
        },
        params.text().expect("text variant"),
        vocab.end_index(),
        max_len,
    );
    emit(&format!("{}\n", vocab.decode(&tokens)))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<ExitCode> {
    let (params, data) = load_model(cfg)?;
    let test_reviews: Vec<Review> = data
        .reviews
        .iter()
        .filter(|r| !data.split.is_train(r.user, r.item))
        .cloned()
        .collect();
    let labels = match &cfg.labels {
        Some(path) => Some(resolve_region_labels(&load_region_labels(path)?, &data.interactions).0),
        None => None,
    };
    let report = evaluate(
        &params,
        &EvalInputs {
            features: data.features.as_ref(),
            train: &data.split.train,
            test: &data.split.test,
            n: cfg.top_n,
            f1_mode: cfg.f1_mode,
            test_reviews: &test_reviews,
            end_token: data.vocab.as_ref().map_or(0, Vocabulary::end_index),
            max_review_len: cfg.max_review_len,
            labels: labels.as_deref(),
        },
    )?;
    let json = report.to_json();
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("metrics.json"), &json)?;
    emit(&format!("{json}\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seeds: u64, variant: Variant, tolerance: f64, fault: Option<ParamGroup>) -> Result<ExitCode> {
    let report = run_gradcheck(&GradcheckOptions {
        variant,
        seeds,
        tolerance,
        fault,
        ..GradcheckOptions::default()
    })?;
    emit(&report.to_table())?;
    if report.passed() {
        println!("all groups pass over {seeds} seeds");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::from(EXIT_NUMERICAL))
    }
}

fn cmd_synth(out: &Path, synth: &SynthConfig) -> Result<ExitCode> {
    let ds = generate_synthetic(synth)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_interactions(&ds.interactions, out.join("interactions.tsv"))?;
    write_reviews(&ds.reviews, out.join("reviews.tsv"))?;
    ds.features.write(out.join("features.vxrf"))?;
    // Unpurchased items never reach interactions.tsv, so feature rows need a manifest.
    let manifest: String = ds.interactions.items().ids().iter().map(|id| format!("{id}\n")).collect();
    fs::write(out.join("items.tsv"), manifest)?;
    // Planted regions double as region labels on the native grid.
    let side = ds.features.grid_side().expect("generator checks the grid");
    let labels: Vec<RawRegionLabel> = ds
        .ground_truth
        .iter()
        .map(|g| RawRegionLabel {
            user: ds.interactions.users().id(g.user).to_owned(),
            item: ds.interactions.items().id(g.item).to_owned(),
            grid_side: side,
            cells: g.regions.clone(),
        })
        .collect();
    write_region_labels(&labels, out.join("labels.tsv"))?;
    let cfg = RunConfig {
        interactions: Some("interactions.tsv".into()),
        reviews: Some("reviews.tsv".into()),
        features: Some("features.vxrf".into()),
        feature_manifest: Some("items.tsv".into()),
        labels: Some("labels.tsv".into()),
        output_dir: "run".into(),
        ..RunConfig::default()
    };
    fs::write(out.join("run.conf"), cfg.render())?;
    println!(
        "wrote {} users, {} items, {} reviews to {}",
        ds.interactions.num_users(),
        ds.interactions.num_items(),
        ds.reviews.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
