use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use xmodal_core::checkpoint::Checkpoint;
use xmodal_core::encoder::encode;
use xmodal_core::experiment::{compare_scenarios, sweep_lambda as run_sweep, LambdaPoint};
use xmodal_core::math::cosine_distance;
use xmodal_core::optim::{check_training_inputs, train_with_observer};
use xmodal_core::{
    generate_synthetic, subset_protocol, Dataset, EpochRecord, FreezeBranch, RetrievalReport, RngSeed, Scenario, Side,
    SyntheticSpec,
};

use crate::config::{require, CliConfig};
use crate::{
    CliError, CompareArgs, EvalArgs, FreezeArg, GenArgs, Modality, QueryArgs, SweepArgs, TrainArgs, TrainOverrides,
};

fn parse_list<T>(s: &str, what: &str, parse: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what} list is empty")));
    }
    Ok(items)
}

fn parse_f64(v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| CliError::Usage(format!("not a number: {v:?}")))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    log::info!("loading {}", path.display());
    Ok(Dataset::load(path)?)
}

/// Loads the configuration file and applies command-line overrides.
fn resolve_config(o: &TrainOverrides) -> Result<CliConfig, CliError> {
    let mut c = CliConfig::load_or_default(o.config.as_deref())?;
    if let Some(p) = &o.train_data {
        c.data.train = Some(p.clone());
    }
    if let Some(p) = &o.validation_data {
        c.data.validation = Some(p.clone());
    }
    let t = &mut c.training;
    if let Some(s) = &o.scenario {
        t.scenario = s.parse::<Scenario>()?;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = o.$flag { t.$($field).+ = v; })*
        };
    }
    set!(
        epochs => epochs,
        seed => seed,
        learning_rate => learning_rate,
        batch_size => batch_size,
        labeled_fraction => labeled_fraction,
        alpha => loss.alpha,
        lambda => loss.lambda,
        alpha_pos => loss.alpha_pos,
        alpha_neg => loss.alpha_neg,
        eval_every => eval_every,
        unfreeze_epoch => unfreeze_epoch,
    );
    if let Some(f) = o.freeze_branch {
        t.freeze_branch = match f {
            FreezeArg::None => FreezeBranch::None,
            FreezeArg::A => FreezeBranch::A,
            FreezeArg::B => FreezeBranch::B,
        };
    }
    if let Some(d) = o.latent_dim {
        c.encoder.latent_dim = d;
    }
    if let Some(h) = &o.hidden_dims {
        c.encoder.hidden_dims = h
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("bad hidden width {v:?}")))
            })
            .collect::<Result<_, _>>()?;
    }
    c.training.validate()?;
    Ok(c)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn gen(a: GenArgs, out: &mut impl Write) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(
        n_classes,
        pairs_per_class,
        latent_dim_true,
        dim_a,
        dim_b,
        within_class_noise,
        cross_modal_noise,
        unlabeled_fraction,
        seed
    );
    let splits = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out)?;
    for (name, ds) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        let path = a.out.join(format!("{name}.tsv"));
        ds.save(&path)?;
        writeln!(out, "{name}\t{}\t{}", ds.len(), path.display())?;
    }
    Ok(())
}

pub fn train(a: TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let config = resolve_config(&a.overrides)?;
    let train_set = load_dataset(require(&config.data.train, "train")?)?;
    let validation = load_dataset(require(&config.data.validation, "validation")?)?;
    let spec = config.encoder.spec_for(&train_set);

    let mut log_file = match &a.log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Some(BufWriter::new(File::create(p)?))
        }
        None => None,
    };
    check_training_inputs(&config.training, &spec, &train_set, &validation)?;
    writeln!(out, "{}", EpochRecord::LOG_HEADER)?;
    let mut io_error = None;
    let outcome = train_with_observer(&config.training, &spec, &train_set, &validation, |r, _| {
        let line = r.log_line();
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "{line}")?;
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(())
        };
        if let Err(e) = emit() {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    Checkpoint::new(outcome.params, Some(config.training.clone())).save(&a.out)?;
    log::info!(
        "best epoch {}, checkpoint written to {}",
        outcome.history.best_epoch,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dataset = load_dataset(&a.dataset)?;
    let report = subset_protocol(&ckpt.params, &dataset, a.subset_size, a.n_subsets, RngSeed(a.seed))?;
    write!(out, "{}", report.to_key_value())?;
    if let Some(p) = &a.tsv {
        let name = a
            .checkpoint
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
        write_file(
            p,
            &format!("{}\n{}", RetrievalReport::TSV_HEADER, report.tsv_rows(&name)),
        )?;
    }
    Ok(())
}

pub fn sweep_lambda(a: SweepArgs, out: &mut impl Write) -> Result<(), CliError> {
    let values = parse_list(&a.values, "lambda", parse_f64)?;
    let config = resolve_config(&a.overrides)?;
    let train_set = load_dataset(require(&config.data.train, "train")?)?;
    let validation = load_dataset(require(&config.data.validation, "validation")?)?;
    let spec = config.encoder.spec_for(&train_set);
    let points = run_sweep(&config.training, &spec, &values, &train_set, &validation)?;
    let mut table = format!("{}\n", LambdaPoint::TSV_HEADER);
    for p in &points {
        table.push_str(&p.tsv_row());
        table.push('\n');
    }
    write!(out, "{table}")?;
    if let Some(p) = &a.tsv {
        write_file(p, &table)?;
    }
    Ok(())
}

fn compare_table(runs: &[(Scenario, &RetrievalReport)]) -> String {
    let mut s = format!(
        "{:<16} {:>15} {:>15} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "scenario", "medr_ab", "medr_ba", "r1_ab", "r5_ab", "r10_ab", "r1_ba", "r5_ba", "r10_ba"
    );
    for (scenario, r) in runs {
        let pm = |m: xmodal_core::eval::MeanStd| format!("{:.1} +- {:.1}", m.mean, m.std);
        s.push_str(&format!(
            "{:<16} {:>15} {:>15} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}\n",
            scenario.name(),
            pm(r.a_to_b.medr),
            pm(r.b_to_a.medr),
            r.a_to_b.r1.mean,
            r.a_to_b.r5.mean,
            r.a_to_b.r10.mean,
            r.b_to_a.r1.mean,
            r.b_to_a.r5.mean,
            r.b_to_a.r10.mean,
        ));
    }
    s
}

pub fn compare(a: CompareArgs, out: &mut impl Write) -> Result<(), CliError> {
    let scenarios = parse_list(&a.scenarios, "scenario", |s| Ok(s.parse::<Scenario>()?))?;
    let mut config = resolve_config(&a.overrides)?;
    if let Some(p) = &a.test_data {
        config.data.test = Some(p.clone());
    }
    let e = &mut config.evaluation;
    if let Some(v) = a.subset_size {
        e.subset_size = v;
    }
    if let Some(v) = a.n_subsets {
        e.n_subsets = v;
    }
    if let Some(v) = a.eval_seed {
        e.seed = v;
    }
    let train_set = load_dataset(require(&config.data.train, "train")?)?;
    let validation = load_dataset(require(&config.data.validation, "validation")?)?;
    let test = load_dataset(require(&config.data.test, "test")?)?;
    let spec = config.encoder.spec_for(&train_set);
    let runs = compare_scenarios(
        &config.training,
        &spec,
        &scenarios,
        &train_set,
        &validation,
        &test,
        config.evaluation,
    )?;

    let rows: Vec<(Scenario, &RetrievalReport)> = runs.iter().map(|r| (r.scenario, &r.report)).collect();
    write!(out, "{}", compare_table(&rows))?;
    if let Some(p) = &a.tsv {
        let mut tsv = format!("{}\n", RetrievalReport::TSV_HEADER);
        for r in &runs {
            tsv.push_str(&r.report.tsv_rows(r.scenario.name()));
        }
        write_file(p, &tsv)?;
    }
    if let Some(dir) = &a.save_dir {
        fs::create_dir_all(dir)?;
        for r in &runs {
            let config = xmodal_core::TrainConfig {
                scenario: r.scenario,
                ..config.training.clone()
            };
            Checkpoint::new(r.params.clone(), Some(config)).save(dir.join(format!("{}.ckpt", r.scenario)))?;
            let log: String = r.history.epochs.iter().map(|e| e.log_line() + "\n").collect();
            write_file(&dir.join(format!("{}.log", r.scenario)), &log)?;
        }
    }
    Ok(())
}

pub fn query(a: QueryArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.top == 0 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dataset = load_dataset(&a.dataset)?;
    let side = match a.modality {
        Modality::A => Side::A,
        Modality::B => Side::B,
    };
    let features = match (&a.features, &a.id) {
        (Some(csv), _) => parse_list(csv, "feature", parse_f64)?,
        (None, Some(id)) => {
            let i = dataset
                .position(id)
                .ok_or_else(|| CliError::Usage(format!("no sample with id {id:?} in {}", a.dataset.display())))?;
            let s = &dataset.samples[i];
            match side {
                Side::A => s.features_a.clone(),
                Side::B => s.features_b.clone(),
            }
        }
        (None, None) => unreachable!("clap requires --features or --id"),
    };
    let spec = ckpt.params.spec();
    if features.len() != spec.input_dim(side) {
        return Err(CliError::Usage(format!(
            "query has {} features, modality {side:?} expects {}",
            features.len(),
            spec.input_dim(side)
        )));
    }
    let q = encode(&ckpt.params, side, &features)?;
    let mut ranked = Vec::with_capacity(dataset.len());
    for (j, s) in dataset.samples.iter().enumerate() {
        let cand = match side {
            Side::A => &s.features_b,
            Side::B => &s.features_a,
        };
        let z = encode(&ckpt.params, side.other(), cand)?;
        ranked.push((cosine_distance(&q, &z)?, j));
    }
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    writeln!(out, "rank\tid\tdistance")?;
    for (rank, (d, j)) in ranked.iter().take(a.top).enumerate() {
        writeln!(out, "{}\t{}\t{:.6}", rank + 1, dataset.samples[*j].id, d.max(0.0))?;
    }
    Ok(())
}
