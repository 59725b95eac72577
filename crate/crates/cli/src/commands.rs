use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use mmt::data::corpus::parse_corpus;
use mmt::data::{
    corpus_stats, oov_rate, read_manifest, Checkpoint, FeatureGrid, ParallelCorpus, Vocabulary, EOS,
};
use mmt::decoding::{beam_search, greedy, rescore_beam, BeamConfig, BeamResult};
use mmt::exec::Execution;
use mmt::metrics::{corpus_bleu, corpus_bleu_lines, corpus_chrf3, corpus_gleu, sentence_bleu};
use mmt::models::{
    CharInventory, CharLm, Modality, ModelConfig, ScoreRegressor, Seq2Seq, SuitabilityClassifier,
    TranslationExample, TranslationInput,
};
use mmt::selection::{self, encode_target};
use mmt::training::{self, ScstObjective, TrainConfig};
use mmt::Tensor;

use crate::config::{BeamDefaults, Config};
use crate::error::CliError;
use crate::{
    BacktranslateArgs, CaptionArgs, DecodeArgs, EvalArgs, JobsArg, LmScoreArgs, LmTrainArgs,
    ModelArgs, RescoreArgs, ScorerKind, SelectDataArgs, StatsArgs, TrainArgs, TranslateArgs,
};

type R<T = ()> = Result<T, CliError>;

/// Maximum caption length when none is configured.
const CAPTION_MAX_LEN: usize = 50;

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn read_text(path: &Path) -> R<String> {
    if is_stdio(path) {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
    }
}

/// Non-empty sentences, one per line.
fn read_sentences(path: &Path) -> R<Vec<String>> {
    let text = read_text(path)?;
    parse_corpus(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Raw lines; empty lines are kept.
fn read_raw_lines(path: &Path) -> R<Vec<String>> {
    Ok(read_text(path)?.lines().map(String::from).collect())
}

fn write_text(path: &Path, text: &str) -> R {
    if is_stdio(path) {
        let mut out = io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    } else {
        fs::write(path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }
}

fn lines_text<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    s
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Picks the execution mode and sizes the worker pool.
fn execution(jobs: JobsArg) -> R<Execution> {
    match jobs.jobs {
        0 => Err(CliError::Usage("--jobs must be at least 1".into())),
        1 => Ok(Execution::Sequential),
        n => {
            #[cfg(feature = "parallel")]
            {
                // A second call in the same process keeps the first pool.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            #[cfg(not(feature = "parallel"))]
            log::warn!("built without parallel support; --jobs {n} runs sequentially");
            Ok(Execution::Parallel)
        }
    }
}

fn read_vocab(path: &Path) -> R<Vocabulary> {
    Vocabulary::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn decode_defaults(cfg: &Config, d: DecodeArgs) -> R<BeamDefaults> {
    let out = BeamDefaults {
        beam: d.beam.unwrap_or(cfg.decode.beam),
        alpha: d.alpha.unwrap_or(cfg.decode.alpha),
        max_len: d.max_len.unwrap_or(cfg.decode.max_len),
    };
    if out.beam == 0 {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    if !(out.alpha.is_finite() && out.alpha >= 0.0) {
        return Err(CliError::Usage(
            "--alpha must be a non-negative number".into(),
        ));
    }
    Ok(out)
}

fn model_config(cfg: &Config, src: Option<&Vocabulary>, tgt: &Vocabulary) -> R<ModelConfig> {
    let mut m = cfg.model.clone();
    m.tgt_vocab = tgt.len();
    m.src_vocab = if m.has(Modality::Text) {
        src.ok_or_else(|| CliError::Usage("--vocab-src is required for text input".into()))?
            .len()
    } else {
        0
    };
    m.validate()
        .map_err(|e| CliError::Usage(format!("model configuration: {e}")))?;
    Ok(m)
}

struct Loaded {
    cfg: Config,
    model: Seq2Seq<f32>,
    src: Option<Vocabulary>,
    tgt: Vocabulary,
}

fn load_model(a: &ModelArgs) -> R<Loaded> {
    let cfg = Config::load(a.config.as_deref())?;
    let src = a.vocab_src.as_deref().map(read_vocab).transpose()?;
    let tgt = read_vocab(&a.vocab_tgt)?;
    let mc = model_config(&cfg, src.as_ref(), &tgt)?;
    let ck = Checkpoint::read(&a.model)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.model.display())))?;
    let model = Seq2Seq::from_checkpoint(mc, &ck)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.model.display())))?;
    Ok(Loaded {
        cfg,
        model,
        src,
        tgt,
    })
}

fn load_manifest(path: Option<&Path>) -> R<Option<BTreeMap<usize, PathBuf>>> {
    path.map(|p| read_manifest(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .transpose()
}

fn read_grid(path: &Path) -> R<FeatureGrid> {
    FeatureGrid::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn grid_rows(path: &Path) -> R<Tensor<f32>> {
    Ok(read_grid(path)?.to_rows())
}

/// Image rows for line `i`, if the model attends to images.
fn image_for(
    cfg: &ModelConfig,
    manifest: Option<&BTreeMap<usize, PathBuf>>,
    i: usize,
) -> R<Option<Tensor<f32>>> {
    if !cfg.has(Modality::Image) {
        return Ok(None);
    }
    let manifest = manifest.ok_or_else(|| {
        CliError::Usage("this model attends to images; pass --features-manifest".into())
    })?;
    let path = manifest
        .get(&i)
        .ok_or_else(|| CliError::Data(format!("no image listed for line {i}")))?;
    grid_rows(path).map(Some)
}

fn inputs_for(
    cfg: &ModelConfig,
    src: Option<&Vocabulary>,
    lines: &[String],
    manifest: Option<&BTreeMap<usize, PathBuf>>,
    lang: Option<usize>,
) -> R<Vec<TranslationInput<f32>>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let ids = match src {
                Some(v) if cfg.has(Modality::Text) => v.encode(line),
                _ => Vec::new(),
            };
            let mut input = TranslationInput::text(ids);
            if let Some(rows) = image_for(cfg, manifest, i)? {
                input = input.with_image(rows);
            }
            if let Some(l) = lang {
                input = input.with_lang(l);
            }
            Ok(input)
        })
        .collect()
}

fn beam_for(d: &BeamDefaults, input: &TranslationInput<f32>, fallback: usize) -> BeamConfig {
    let mut b = d.for_source(input.source.len());
    if d.max_len == 0 && input.source.is_empty() {
        b.max_len = fallback;
    }
    b
}

fn decode_all(
    model: &Seq2Seq<f32>,
    inputs: &[TranslationInput<f32>],
    d: &BeamDefaults,
    exec: Execution,
) -> R<Vec<BeamResult>> {
    let results = exec.map(inputs, |_, x| {
        beam_search(model, x, &beam_for(d, x, CAPTION_MAX_LEN))
    });
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::from(e).context(&format!("line {i}"))))
        .collect()
}

impl CliError {
    fn context(self, what: &str) -> CliError {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
        }
    }
}

fn top_text(vocab: &Vocabulary, beam: &BeamResult) -> R<String> {
    let top = beam
        .top()
        .ok_or_else(|| CliError::Numeric("empty beam".into()))?;
    Ok(vocab.decode_sentence(top.output())?)
}

fn lang_id(model: &ModelConfig, tgt: &Vocabulary, lang: Option<&str>) -> R<Option<usize>> {
    match (model.multilingual, lang) {
        (false, None) => Ok(None),
        (false, Some(_)) => {
            log::warn!("--lang ignored: the model is not multilingual");
            Ok(None)
        }
        (true, None) => Err(CliError::Usage(
            "multilingual model: pass --lang <token>".into(),
        )),
        (true, Some(l)) => tgt.id(l).map(Some).ok_or_else(|| {
            CliError::Usage(format!("language token `{l}` not in the target vocabulary"))
        }),
    }
}

// ---------------------------------------------------------------- train

/// Training examples from aligned lines; multilingual targets lead with their language token.
fn examples_for(
    cfg: &ModelConfig,
    src: Option<&Vocabulary>,
    tgt: &Vocabulary,
    source: &[String],
    target: &[String],
    manifest: Option<&BTreeMap<usize, PathBuf>>,
) -> R<Vec<TranslationExample<f32>>> {
    let mut out = Vec::with_capacity(target.len());
    for (i, t) in target.iter().enumerate() {
        let (lang, body) = if cfg.multilingual {
            let (l, rest) = t
                .trim()
                .split_once(char::is_whitespace)
                .ok_or_else(|| CliError::Data(format!("line {i}: expected `<lang> <caption>`")))?;
            let id = tgt
                .id(l)
                .ok_or_else(|| CliError::Data(format!("line {i}: unknown language token `{l}`")))?;
            (Some(id), rest)
        } else {
            (None, t.as_str())
        };
        let line = source.get(i).map(String::as_str).unwrap_or("");
        let ids = match src {
            Some(v) if cfg.has(Modality::Text) => v.encode(line),
            _ => Vec::new(),
        };
        let mut input = TranslationInput::text(ids);
        if let Some(rows) = image_for(cfg, manifest, i)? {
            input = input.with_image(rows);
        }
        if let Some(l) = lang {
            input = input.with_lang(l);
        }
        out.push(TranslationExample {
            input,
            target: encode_target(tgt, body),
        });
    }
    Ok(out)
}

fn vocab_or_build(path: &Path, lines: &[String], max: usize, specials: &[&str]) -> R<Vocabulary> {
    if path.exists() {
        return read_vocab(path);
    }
    let v = Vocabulary::build_with_specials(lines.iter().map(String::as_str), max, specials)?;
    v.write(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    log::info!("wrote vocabulary {} ({} entries)", path.display(), v.len());
    Ok(v)
}

fn without_eos(ids: &[usize]) -> Vec<usize> {
    match ids.split_last() {
        Some((&EOS, body)) => body.to_vec(),
        _ => ids.to_vec(),
    }
}

/// Corpus BLEU of greedy outputs; the validation score.
fn greedy_bleu(
    model: &Seq2Seq<f32>,
    examples: &[TranslationExample<f32>],
    exec: Execution,
) -> mmt::Result<f64> {
    let hyps = exec.try_map(examples, |_, ex| {
        let max_len = if ex.input.source.is_empty() {
            CAPTION_MAX_LEN
        } else {
            mmt::decoding::default_max_len(ex.input.source.len())
        };
        greedy(model, &ex.input, max_len).map(|h| h.output().to_vec())
    })?;
    let refs: Vec<Vec<usize>> = examples.iter().map(|e| without_eos(&e.target)).collect();
    corpus_bleu(&hyps, &refs)
}

fn train_config(cfg: &Config, seed: u64, exec: Execution) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.train.batch_size,
        max_steps: cfg.train.max_steps,
        eval_every: cfg.train.eval_every,
        patience: cfg.train.patience,
        clip_norm: cfg.train.clip_norm,
        seed,
        adam: cfg.train.adam,
        target_score: None,
        best_path: None,
        exec,
    }
}

fn report_outcome(out: &training::TrainOutcome, path: &Path) -> R {
    out.best
        .write(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    log::info!(
        "best={:.6} at step {} of {}; wrote {}",
        out.best_score,
        out.best_step,
        out.steps,
        path.display()
    );
    if let Some(msg) = &out.aborted {
        log::warn!("{msg}");
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> R {
    let cfg = Config::load(a.config.as_deref())?;
    let exec = execution(a.jobs)?;
    let text = cfg.model.has(Modality::Text);
    let read_src = |p: &Option<PathBuf>, flag: &str| -> R<Vec<String>> {
        match (text, p) {
            (true, Some(p)) => read_sentences(p),
            (true, None) => Err(CliError::Usage(format!(
                "{flag} is required for text input"
            ))),
            (false, _) => Ok(Vec::new()),
        }
    };
    let source = read_src(&a.input, "--input")?;
    let target = read_sentences(&a.target)?;
    let valid_source = read_src(&a.valid_input, "--valid-input")?;
    let valid_target = read_sentences(&a.valid_target)?;
    if text && (source.len() != target.len() || valid_source.len() != valid_target.len()) {
        return Err(CliError::Data(
            "source and target corpora differ in length".into(),
        ));
    }

    let src = if text {
        let p = a
            .vocab_src
            .as_deref()
            .ok_or_else(|| CliError::Usage("--vocab-src is required for text input".into()))?;
        Some(vocab_or_build(p, &source, cfg.max_vocab, &[])?)
    } else {
        None
    };
    let (langs, bodies): (Vec<&str>, Vec<String>) = if cfg.model.multilingual {
        let mut langs: Vec<&str> = Vec::new();
        let mut bodies = Vec::new();
        for t in &target {
            let (l, rest) = t.trim().split_once(char::is_whitespace).unwrap_or((t, ""));
            if !langs.contains(&l) {
                langs.push(l);
            }
            bodies.push(rest.to_string());
        }
        (langs, bodies)
    } else {
        (Vec::new(), target.clone())
    };
    let tgt = vocab_or_build(&a.vocab_tgt, &bodies, cfg.max_vocab, &langs)?;
    let mc = model_config(&cfg, src.as_ref(), &tgt)?;

    let manifest = load_manifest(a.features_manifest.as_deref())?;
    let valid_manifest = load_manifest(a.valid_features_manifest.as_deref())?;
    let examples = examples_for(&mc, src.as_ref(), &tgt, &source, &target, manifest.as_ref())?;
    let valid = examples_for(
        &mc,
        src.as_ref(),
        &tgt,
        &valid_source,
        &valid_target,
        valid_manifest.as_ref(),
    )?;

    let model = match &a.model {
        Some(p) => {
            let ck =
                Checkpoint::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Seq2Seq::from_checkpoint(mc, &ck)?
        }
        None => Seq2Seq::new(mc, a.seed)?,
    };
    let tc = train_config(&cfg, a.seed, exec);

    let outcome = if a.reward.is_some() || a.lambda.is_some() {
        let mut sc = cfg.scst;
        if let Some(r) = &a.reward {
            sc.reward = r
                .parse()
                .map_err(|e: mmt::Error| CliError::Usage(e.to_string()))?;
        }
        if let Some(l) = &a.lambda {
            sc.lambda = l
                .parse()
                .map_err(|e: mmt::Error| CliError::Usage(e.to_string()))?;
        }
        let mut obj = ScstObjective::new(model, sc)?;
        training::train(&mut obj, &examples, &tc, |o| {
            greedy_bleu(&o.model, &valid, exec)
        })?
    } else {
        let mut model = model;
        training::train(&mut model, &examples, &tc, |m| greedy_bleu(m, &valid, exec))?
    };
    report_outcome(&outcome, &a.output)
}

// ---------------------------------------------------------------- decoding commands

pub fn translate(a: TranslateArgs) -> R {
    let exec = execution(a.jobs)?;
    let l = load_model(&a.model)?;
    let d = decode_defaults(&l.cfg, a.decode)?;
    let lines = read_sentences(&a.input)?;
    let manifest = load_manifest(a.features_manifest.as_deref())?;
    let inputs = inputs_for(
        l.model.config(),
        l.src.as_ref(),
        &lines,
        manifest.as_ref(),
        None,
    )?;

    if let Some(sweep) = &a.sweep_alpha {
        let reference = read_sentences(a.reference.as_deref().expect("required by clap"))?;
        if reference.len() != lines.len() {
            return Err(CliError::Data(
                "reference and input differ in length".into(),
            ));
        }
        let mut report = String::new();
        for tok in sweep.split(',') {
            let alpha: f64 = tok
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad alpha `{tok}` in --sweep-alpha")))?;
            let dd = decode_defaults(
                &l.cfg,
                DecodeArgs {
                    alpha: Some(alpha),
                    ..a.decode
                },
            )?;
            let beams = decode_all(&l.model, &inputs, &dd, exec)?;
            let hyps = beams
                .iter()
                .map(|b| top_text(&l.tgt, b))
                .collect::<R<Vec<_>>>()?;
            let bleu = corpus_bleu_lines(&hyps, &reference)?;
            report.push_str(&format!("alpha={alpha} BLEU={bleu:.4}\n"));
        }
        return write_text(&a.output, &report);
    }

    let beams = decode_all(&l.model, &inputs, &d, exec)?;
    let out = beams
        .iter()
        .map(|b| top_text(&l.tgt, b))
        .collect::<R<Vec<_>>>()?;
    write_text(&a.output, &lines_text(&out))
}

pub fn caption(a: CaptionArgs) -> R {
    let exec = execution(a.jobs)?;
    let cfg = Config::load(a.config.as_deref())?;
    let tgt = read_vocab(&a.vocab_tgt)?;
    let mc = model_config(&cfg, None, &tgt)?;
    if mc.has(Modality::Text) || !mc.has(Modality::Image) {
        return Err(CliError::Usage(
            "caption needs an image-only model ([model] modalities = image)".into(),
        ));
    }
    let ck = Checkpoint::read(&a.model)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.model.display())))?;
    let model = Seq2Seq::<f32>::from_checkpoint(mc.clone(), &ck)?;
    let d = decode_defaults(&cfg, a.decode)?;
    let lang = lang_id(&mc, &tgt, a.lang.as_deref())?;
    let manifest = load_manifest(Some(&a.features_manifest))?.expect("path given");
    let inputs = manifest
        .values()
        .map(|p| {
            let mut x = TranslationInput::text(Vec::new()).with_image(grid_rows(p)?);
            if let Some(l) = lang {
                x = x.with_lang(l);
            }
            Ok(x)
        })
        .collect::<R<Vec<_>>>()?;
    let beams = decode_all(&model, &inputs, &d, exec)?;
    let out = beams
        .iter()
        .map(|b| top_text(&tgt, b))
        .collect::<R<Vec<_>>>()?;
    write_text(&a.output, &lines_text(&out))
}

pub fn backtranslate(a: BacktranslateArgs) -> R {
    let exec = execution(a.jobs)?;
    let l = load_model(&a.model)?;
    let src = l
        .src
        .as_ref()
        .ok_or_else(|| CliError::Usage("--vocab-src is required".into()))?;
    let d = decode_defaults(&l.cfg, a.decode)?;
    let lines = read_raw_lines(&a.input)?;
    let longest = lines
        .iter()
        .map(|s| s.split_ascii_whitespace().count())
        .max()
        .unwrap_or(0);
    let beam = BeamConfig {
        width: d.beam,
        alpha: d.alpha,
        max_len: if d.max_len == 0 {
            mmt::decoding::default_max_len(longest)
        } else {
            d.max_len
        },
    };
    let out = selection::backtranslate(&l.model, src, &l.tgt, &lines, &beam, exec)?;
    write_text(
        &with_suffix(&a.output, ".src"),
        &lines_text(&out.corpus.source),
    )?;
    write_text(
        &with_suffix(&a.output, ".tgt"),
        &lines_text(&out.corpus.target),
    )?;
    write_text(&with_suffix(&a.output, ".manifest"), &out.manifest())?;
    log::info!(
        "back-translated {} of {} lines ({} skipped)",
        out.origin.len(),
        lines.len(),
        out.skipped.len()
    );
    Ok(())
}

enum Scorer {
    Oracle(Vec<Vec<usize>>),
    Regressor(Box<ScoreRegressor<f32>>),
    Classifier(Box<SuitabilityClassifier<f32>>),
}

pub fn rescore(a: RescoreArgs) -> R {
    let exec = execution(a.jobs)?;
    let l = load_model(&a.model)?;
    let d = decode_defaults(&l.cfg, a.decode)?;
    let lines = read_sentences(&a.input)?;
    let manifest = load_manifest(a.features_manifest.as_deref())?;
    let inputs = inputs_for(
        l.model.config(),
        l.src.as_ref(),
        &lines,
        manifest.as_ref(),
        None,
    )?;
    let reference = a.reference.as_deref().map(read_sentences).transpose()?;
    if let Some(r) = &reference {
        if r.len() != lines.len() {
            return Err(CliError::Data(
                "reference and input differ in length".into(),
            ));
        }
    }
    let read_ck = |p: &Option<PathBuf>| -> R<Checkpoint> {
        let p = p
            .as_deref()
            .ok_or_else(|| CliError::Usage("--scorer-model is required for this scorer".into()))?;
        Checkpoint::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    let src_len = l.src.as_ref().map_or(0, Vocabulary::len);
    let scorer = match a.scorer {
        ScorerKind::Oracle => {
            let r = reference
                .as_ref()
                .ok_or_else(|| CliError::Usage("the oracle scorer needs --reference".into()))?;
            Scorer::Oracle(r.iter().map(|s| l.tgt.encode(s)).collect())
        }
        ScorerKind::Regressor => {
            let mut rc = l.cfg.regressor;
            rc.src_vocab = src_len;
            rc.hyp_vocab = l.tgt.len();
            Scorer::Regressor(Box::new(ScoreRegressor::from_checkpoint(
                rc,
                &read_ck(&a.scorer_model)?,
            )?))
        }
        ScorerKind::Classifier => {
            let mut cc = l.cfg.classifier;
            cc.vocab = l.tgt.len();
            Scorer::Classifier(Box::new(SuitabilityClassifier::from_checkpoint(
                cc,
                &read_ck(&a.scorer_model)?,
            )?))
        }
    };
    let images: Vec<Option<FeatureGrid>> = match (&scorer, &manifest) {
        (Scorer::Oracle(_), _) => vec![None; lines.len()],
        (_, None) => {
            return Err(CliError::Usage(
                "learned scorers need --features-manifest".into(),
            ))
        }
        (_, Some(m)) => (0..lines.len())
            .map(|i| {
                let p = m
                    .get(&i)
                    .ok_or_else(|| CliError::Data(format!("no image listed for line {i}")))?;
                read_grid(p).map(Some)
            })
            .collect::<R<_>>()?,
    };

    let beams = decode_all(&l.model, &inputs, &d, exec)?;
    let items: Vec<usize> = (0..beams.len()).collect();
    let chosen = exec.try_map(&items, |_, &i| -> mmt::Result<usize> {
        let beam = &beams[i];
        match &scorer {
            Scorer::Oracle(refs) => rescore_beam(beam, |h| Ok(sentence_bleu(h.output(), &refs[i]))),
            Scorer::Regressor(reg) => {
                let rows = images[i].as_ref().expect("checked above").to_rows();
                rescore_beam(beam, |h| reg.predict(&inputs[i].source, h.output(), &rows))
            }
            Scorer::Classifier(cls) => {
                let mean = images[i].as_ref().expect("checked above").mean_vector();
                rescore_beam(beam, |h| cls.probability(&mean, h.output()))
            }
        }
    })?;
    let out = chosen
        .iter()
        .zip(&beams)
        .map(|(&c, b)| Ok(l.tgt.decode_sentence(b.hypotheses[c].output())?))
        .collect::<R<Vec<_>>>()?;
    if let Some(r) = &reference {
        let tops = beams
            .iter()
            .map(|b| top_text(&l.tgt, b))
            .collect::<R<Vec<_>>>()?;
        log::info!(
            "default BLEU={:.4} rescored BLEU={:.4}",
            corpus_bleu_lines(&tops, r)?,
            corpus_bleu_lines(&out, r)?
        );
    }
    write_text(&a.output, &lines_text(&out))
}

// ---------------------------------------------------------------- evaluation and statistics

pub fn eval(a: EvalArgs) -> R {
    let refs = read_raw_lines(&a.reference)?;
    let mut report = String::new();
    for p in &a.input {
        let hyps = read_raw_lines(p)?;
        if hyps.len() != refs.len() {
            return Err(CliError::Data(format!(
                "{} has {} lines but the reference has {}",
                p.display(),
                hyps.len(),
                refs.len()
            )));
        }
        report.push_str(&format!(
            "BLEU={:.4} chrF3={:.2} GLEU={:.4}\n",
            corpus_bleu_lines(&hyps, &refs)?,
            corpus_chrf3(&hyps, &refs)?,
            corpus_gleu(&hyps, &refs)?
        ));
    }
    write_text(Path::new("-"), &report)
}

pub fn stats(a: StatsArgs) -> R {
    let vocab = match (&a.vocab_src, &a.train) {
        (Some(p), _) => Some(read_vocab(p)?),
        (None, Some(t)) => {
            let lines = read_sentences(t)?;
            Some(Vocabulary::build(
                lines.iter().map(String::as_str),
                mmt::data::vocab::DEFAULT_MAX_SIZE,
            )?)
        }
        (None, None) => None,
    };
    let mut report = String::new();
    for p in &a.corpus {
        let lines = read_sentences(p)?;
        let s = corpus_stats(&lines);
        report.push_str(&format!("{}\t{}", p.display(), s.report()));
        if let Some(v) = &vocab {
            report.push_str(&format!(" oov={:.2}%", 100.0 * oov_rate(&lines, v)?));
        }
        report.push('\n');
    }
    write_text(Path::new("-"), &report)
}

// ---------------------------------------------------------------- language model and selection

pub fn lm_train(a: LmTrainArgs) -> R {
    let cfg = Config::load(a.config.as_deref())?;
    let exec = execution(a.jobs)?;
    let lines = read_sentences(&a.input)?;
    let valid = match &a.valid_input {
        Some(p) => read_sentences(p)?,
        None => lines.clone(),
    };
    let inv = CharInventory::from_text(lines.iter().map(String::as_str));
    let mut lm = CharLm::<f32>::new(cfg.charlm, inv, a.seed)?;
    let tc = train_config(&cfg, a.seed, exec);
    let out = training::train(&mut lm, &lines, &tc, |m| {
        let s = selection::lm_scores(m, &valid, exec)?;
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    })?;
    report_outcome(&out, &a.output)
}

fn load_lm(path: &Path) -> R<CharLm<f32>> {
    let ck =
        Checkpoint::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    CharLm::from_checkpoint(&ck).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn lm_score(a: LmScoreArgs) -> R {
    let exec = execution(a.jobs)?;
    let lm = load_lm(&a.model)?;
    let lines = read_sentences(&a.input)?;
    let text = match a.top {
        None => {
            let scores = selection::lm_scores(&lm, &lines, exec)?;
            scores.iter().map(|s| format!("{s:.6}\n")).collect()
        }
        Some(n) => {
            let best = selection::top_n(&lm, &lines, n, exec)?;
            if n > lines.len() {
                log::warn!("requested {n} sentences but the input has {}", lines.len());
            }
            lines_text(&best.iter().map(|&i| &lines[i]).collect::<Vec<_>>())
        }
    };
    write_text(&a.output, &text)
}

pub fn select_data(a: SelectDataArgs) -> R {
    let exec = execution(a.jobs)?;
    let cfg = Config::load(a.rules.as_deref())?;
    let mut rules = cfg.rules;
    rules.vocabulary = a.vocab_tgt.as_deref().map(read_vocab).transpose()?;
    let lm = load_lm(&a.lm)?;
    let corpus = ParallelCorpus::new(read_sentences(&a.input)?, read_sentences(&a.target)?)?;
    let sel = selection::select_parallel(&corpus, &lm, &rules, a.top, exec)?;
    write_text(
        &with_suffix(&a.output, ".src"),
        &lines_text(&sel.corpus.source),
    )?;
    write_text(
        &with_suffix(&a.output, ".tgt"),
        &lines_text(&sel.corpus.target),
    )?;
    let report: Vec<String> = sel.report.iter().map(|r| r.tsv()).collect();
    write_text(&with_suffix(&a.output, ".tsv"), &lines_text(&report))?;
    log::info!(
        "selected {} of {} pairs ({} pass the rules)",
        sel.indices.len(),
        corpus.len(),
        sel.report.iter().filter(|r| r.verdict.accepted).count()
    );
    Ok(())
}
