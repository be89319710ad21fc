use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use noisyir::corpus::{
    intersect_ids, load_embeddings, load_metadata, write_embeddings_binary, write_embeddings_jsonl,
    write_metadata_jsonl, Corpus, EmbeddingStore,
};
use noisyir::drift::{annual_stats, corpus_scenarios, write_scenarios_csv, write_stats_csv};
use noisyir::metrics::{evaluate, MetricFamily, MetricKey, MetricsReport};
use noisyir::pooling::{
    pool_documents, read_hidden_states, AttentionHead, HiddenStateManifest, HiddenStateWriter, PoolingMode,
};
use noisyir::relevance::compute_idf;
use noisyir::report::{comparison_table, depth_table, threshold_table, Table};
use noisyir::retrieval::{build_index, l2_normalize, run_queries, RankedRun};
use noisyir::sampling::{sample_queries, QuerySet};
use noisyir::significance::{compare_runs, ComparisonRow};
use noisyir::synthetic::{generate, hidden_states, SyntheticConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub struct Ctx {
    pub cfg: RunConfig,
    config_hash: String,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Writes `<stem>.csv` and `<stem>.md`.
fn write_table(stem: &Path, table: &Table) -> Result<()> {
    let with = |ext: &str| {
        let mut name = stem.as_os_str().to_os_string();
        name.push(ext);
        PathBuf::from(name)
    };
    write_bytes(&with(".csv"), table.to_csv()?.as_bytes())?;
    write_bytes(&with(".md"), table.to_markdown().as_bytes())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{} not found; {hint}", path.display())))
    }
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let config_hash = cfg.snapshot_hash();
        Self { cfg, config_hash }
    }

    fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    fn corpus(&self) -> Result<Corpus> {
        let path = self.cfg.metadata_path()?;
        let corpus = load_metadata(path, self.cfg.min_chars)?;
        info!("loaded {} documents from {}", corpus.len(), path.display());
        Ok(corpus)
    }

    fn manifest(&self, stage: &str, corpus: Option<&Corpus>) -> Result<Manifest> {
        let digest = corpus.map(Corpus::digest);
        let m = Manifest::new(stage, &self.config_hash, digest.as_deref());
        match corpus {
            Some(_) => m.input(self.cfg.metadata_path()?),
            None => Ok(m),
        }
    }

    /// Verifies the artifact's sidecar when present. Missing sidecars are
    /// tolerated for externally produced files.
    fn check_staged(&self, artifact: &Path, corpus: &Corpus) -> Result<()> {
        match Manifest::read_for(artifact)? {
            Some(m) => m.check(artifact, &self.config_hash, &corpus.digest()),
            None => {
                warn!("{} has no manifest; integrity not verified", artifact.display());
                Ok(())
            }
        }
    }

    fn selected<'a>(&'a self, names: &'a [String]) -> Result<Vec<&'a str>> {
        if names.is_empty() {
            if self.cfg.systems.is_empty() {
                return Err(CliError::Usage("config lists no systems".into()));
            }
            return Ok(self.cfg.systems.iter().map(|s| s.name.as_str()).collect());
        }
        names.iter().map(|n| Ok(self.cfg.system(n)?.name.as_str())).collect()
    }

    fn index_path(&self, name: &str) -> PathBuf {
        self.out(format!("index/{name}.ngem"))
    }

    fn run_path(&self, name: &str) -> PathBuf {
        self.out(format!("runs/{name}.jsonl"))
    }

    fn report_path(&self, name: &str) -> PathBuf {
        self.out(format!("reports/{name}.metrics.json"))
    }

    pub fn idf(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let idf = compute_idf(&corpus)?;
        let path = self.out("idf.csv");
        let mut buf = Vec::new();
        idf.write_csv(&mut buf)?;
        write_bytes(&path, &buf)?;
        self.manifest("idf", Some(&corpus))?.write_for(&path)?;
        info!("{} terms over {} keyworded documents", idf.len(), idf.n_keyworded());
        Ok(())
    }

    pub fn drift(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let stats = annual_stats(&corpus)?;
        let scenarios = corpus_scenarios(&corpus, &stats)?;
        let stats_path = self.out("drift/stats.csv");
        let mut buf = Vec::new();
        write_stats_csv(&stats, &mut buf)?;
        write_bytes(&stats_path, &buf)?;
        self.manifest("drift", Some(&corpus))?.write_for(&stats_path)?;

        let sc_path = self.out("drift/scenarios.csv");
        let mut buf = Vec::new();
        write_scenarios_csv(&scenarios, &mut buf)?;
        write_bytes(&sc_path, &buf)?;
        self.manifest("drift", Some(&corpus))?.write_for(&sc_path)?;
        let mut table = Table::new(["Scenario", "k", "H", "N_eff", "E[|A∩B|]", "P(zero)"].map(String::from).to_vec());
        for s in &scenarios {
            table.push(vec![
                s.name.clone(),
                format!("{}", s.k),
                format!("{:.1}", s.entropy_bits),
                format!("{:.0}", s.n_eff),
                format!("{:.3}", s.expected_overlap),
                format!("{:.2}", s.p_zero),
            ]);
        }
        write_bytes(&self.out("drift/scenarios.md"), table.to_markdown().as_bytes())
    }

    pub fn sample(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let idf = compute_idf(&corpus)?;
        let queries = sample_queries(&corpus, &idf, self.cfg.query_n, self.cfg.seeds.sampling)?;
        let path = self.out("queries.csv");
        let mut buf = Vec::new();
        queries.write_csv(&mut buf)?;
        write_bytes(&path, &buf)?;
        self.manifest("sample", Some(&corpus))?.write_for(&path)?;
        info!("sampled {} queries", queries.len());
        Ok(())
    }

    pub fn pool(&self, args: &PoolArgs) -> Result<()> {
        let bytes = fs::read(&args.hidden_states).map_err(|e| CliError::io(&args.hidden_states, e))?;
        let layout_text = fs::read_to_string(&args.layout).map_err(|e| CliError::io(&args.layout, e))?;
        let layout: HiddenStateManifest = serde_json::from_str(&layout_text)?;
        let states = read_hidden_states(&bytes, &layout)?;
        let head = match &args.head {
            Some(p) => Some(AttentionHead::from_json(
                &fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            )?),
            None => None,
        };
        let mode = PoolingMode::from(args.mode);
        if mode == PoolingMode::Attention && head.is_none() {
            return Err(CliError::Usage("--mode attention requires --head".into()));
        }
        let store = pool_documents(&states, mode, head.as_ref())?;
        let output = args
            .output
            .clone()
            .unwrap_or_else(|| self.out(format!("embeddings/{}.ngem", args.name)));
        let mut buf = Vec::new();
        write_embeddings_binary(&store, &mut buf).map_err(|e| CliError::io(&output, e))?;
        write_bytes(&output, &buf)?;
        let mut m = self
            .manifest("pool", None)?
            .input(&args.hidden_states)?
            .input(&args.layout)?;
        if let Some(h) = &args.head {
            m = m.input(h)?;
        }
        m.write_for(&output)?;
        info!("pooled {} documents into {}", store.len(), output.display());
        Ok(())
    }

    pub fn index(&self, names: &[String]) -> Result<()> {
        for name in self.selected(names)? {
            let spec = self.cfg.system(name)?;
            let raw = load_embeddings(&spec.embeddings, None)?;
            let store = l2_normalize(&raw)?;
            let path = self.index_path(name);
            let mut buf = Vec::new();
            write_embeddings_binary(&store, &mut buf).map_err(|e| CliError::io(&path, e))?;
            write_bytes(&path, &buf)?;
            self.manifest("index", None)?.input(&spec.embeddings)?.write_for(&path)?;
            info!("indexed {} vectors for {name}", store.len());
        }
        Ok(())
    }

    fn load_index(&self, name: &str) -> Result<EmbeddingStore> {
        let path = self.index_path(name);
        require(&path, "run the index stage first")?;
        if let Some(m) = Manifest::read_for(&path)? {
            m.verify_output(&path)?;
        }
        load_embeddings(&path, None)?
            .mark_normalized()
            .map_err(|id| CliError::Integrity(format!("{}: vector {id:?} is not unit length", path.display())))
    }

    pub fn search(&self, names: &[String]) -> Result<()> {
        let corpus = self.corpus()?;
        let qpath = self.out("queries.csv");
        require(&qpath, "run the sample stage first")?;
        self.check_staged(&qpath, &corpus)?;
        let file = fs::File::open(&qpath).map_err(|e| CliError::io(&qpath, e))?;
        let queries = QuerySet::read_csv(BufReader::new(file))?;

        // every configured system must see the same query set
        let all: Vec<EmbeddingStore> = self
            .cfg
            .systems
            .iter()
            .map(|s| self.load_index(&s.name))
            .collect::<Result<_>>()?;
        let common: BTreeSet<String> = intersect_ids(&all.iter().collect::<Vec<_>>(), &corpus)
            .into_iter()
            .collect();
        let ids: Vec<&str> = queries.ids().filter(|q| common.contains(*q)).collect();
        if ids.len() < queries.len() {
            warn!(
                "{} of {} sampled queries lack a vector in some system and are dropped",
                queries.len() - ids.len(),
                queries.len()
            );
        }
        if ids.is_empty() {
            return Err(CliError::Input("no sampled query is present in every system".into()));
        }
        let k = self.cfg.eval_config()?.max_k();
        for name in self.selected(names)? {
            let pos = self.cfg.systems.iter().position(|s| s.name == name).expect("selected");
            let store = &all[pos];
            let index = build_index(store)?;
            let out = run_queries(name, &index, ids.iter().copied(), store, k)?;
            let path = self.run_path(name);
            let mut buf = Vec::new();
            out.run.write_jsonl(&mut buf)?;
            write_bytes(&path, &buf)?;
            self.manifest("search", Some(&corpus))?
                .input(&qpath)?
                .input(&self.index_path(name))?
                .write_for(&path)?;
        }
        Ok(())
    }

    pub fn eval(&self, args: &EvalArgs) -> Result<()> {
        let corpus = self.corpus()?;
        let idf = compute_idf(&corpus)?;
        let config = self.cfg.eval_config()?;
        let jobs: Vec<(String, PathBuf)> = match &args.run {
            Some(path) => {
                let name = match &args.name {
                    Some(n) => n.clone(),
                    None => path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .ok_or_else(|| CliError::Usage("cannot derive a system name; pass --name".into()))?,
                };
                vec![(name, path.clone())]
            }
            None => self
                .selected(&[])?
                .into_iter()
                .map(|n| (n.to_owned(), self.run_path(n)))
                .collect(),
        };
        for (name, path) in jobs {
            require(&path, "run the search stage first")?;
            self.check_staged(&path, &corpus)?;
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let run = RankedRun::read_jsonl(BufReader::new(file), &name)?;
            let report = evaluate(&run, &corpus, &idf, &config)?;
            for (key, excluded) in &report.exclusions {
                if !excluded.is_empty() {
                    info!("{name}: {} queries excluded from {key} (zero ideal DCG)", excluded.len());
                }
            }
            let out = self.report_path(&name);
            write_json(&out, &report)?;
            self.manifest("eval", Some(&corpus))?.input(&path)?.write_for(&out)?;
        }
        Ok(())
    }

    fn load_report(&self, name: &str, corpus: &Corpus) -> Result<MetricsReport> {
        let path = self.report_path(name);
        require(&path, "run the eval stage first")?;
        self.check_staged(&path, corpus)?;
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let report: MetricsReport = serde_json::from_str(&text)?;
        if report.corpus_digest != corpus.digest() {
            return Err(CliError::Integrity(format!(
                "{} was computed on a different corpus",
                path.display()
            )));
        }
        Ok(report)
    }

    pub fn compare(&self, args: &CompareArgs) -> Result<()> {
        let corpus = self.corpus()?;
        let pairs: Vec<(String, String)> = match (&args.a, &args.b) {
            (Some(a), Some(b)) => vec![(self.cfg.system(a)?.name.clone(), self.cfg.system(b)?.name.clone())],
            (None, None) => {
                let names = self.selected(&[])?;
                if names.len() < 2 {
                    return Err(CliError::Usage("comparison needs at least two systems".into()));
                }
                names[1..].iter().map(|b| (names[0].to_owned(), (*b).to_owned())).collect()
            }
            _ => return Err(CliError::Usage("--a and --b must be given together".into())),
        };
        let cells = self.cells(args.metrics.as_deref())?;
        let mut rows: Vec<ComparisonRow> = Vec::new();
        let mut inputs = Vec::new();
        for (a, b) in &pairs {
            let ra = self.load_report(a, &corpus)?;
            let rb = self.load_report(b, &corpus)?;
            rows.extend(compare_runs(&ra, &rb, &cells, self.cfg.bootstrap_b, self.cfg.seeds.bootstrap)?);
            inputs.push(self.report_path(a));
            inputs.push(self.report_path(b));
        }
        // group by threshold track, keeping pair order inside each track
        rows.sort_by(|x, y| x.tau.total_cmp(&y.tau));
        let json_path = self.out("comparison.json");
        write_json(&json_path, &rows)?;
        let mut m = self.manifest("compare", Some(&corpus))?;
        for p in &inputs {
            m = m.input(p)?;
        }
        m.write_for(&json_path)?;
        write_table(&self.out("comparison"), &comparison_table(&rows))
    }

    /// Parses `ndcg@10,p@10,hit@10`; defaults to those three at the smallest k.
    fn cells(&self, spec: Option<&str>) -> Result<Vec<(MetricFamily, usize)>> {
        let k0 = self.cfg.eval_config()?.k_list[0];
        let Some(spec) = spec else {
            return Ok(vec![
                (MetricFamily::Ndcg, k0),
                (MetricFamily::Precision, k0),
                (MetricFamily::HitRate, k0),
            ]);
        };
        spec.split(',')
            .map(|item| {
                let item = item.trim();
                let (family, k) = item
                    .split_once('@')
                    .ok_or_else(|| CliError::Usage(format!("metric {item:?} needs a depth, e.g. p@10")))?;
                let family: MetricFamily = family.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
                let k: usize = k.parse().map_err(|_| CliError::Usage(format!("bad depth in {item:?}")))?;
                if family != MetricFamily::Rbp && !self.cfg.k_list.contains(&k) {
                    return Err(CliError::Usage(format!("depth {k} is not in k_list")));
                }
                Ok((family, k))
            })
            .collect()
    }

    pub fn report(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let reports: Vec<MetricsReport> = self
            .selected(&[])?
            .into_iter()
            .map(|n| self.load_report(n, &corpus))
            .collect::<Result<_>>()?;
        let refs: Vec<&MetricsReport> = reports.iter().collect();
        let config = self.cfg.eval_config()?;
        for &k in &config.k_list {
            for &tau in &config.tau_list {
                write_table(&self.out(format!("tables/k{k}_tau{tau}")), &threshold_table(&refs, k, tau)?)?;
            }
            if let [t0, t1, ..] = config.tau_list[..] {
                write_table(&self.out(format!("tables/k{k}_pairs")), &depth_table(&refs, k, (t0, t1))?)?;
            }
        }
        for r in &reports {
            let key = MetricKey::new(MetricFamily::Ndcg, config.k_list[0], config.tau_list[0]);
            if let Some(v) = r.mean(&key) {
                info!("{}: {} = {v:.3}", r.system, key.label());
            }
        }
        Ok(())
    }

    pub fn run_all(&self) -> Result<()> {
        self.idf()?;
        self.drift()?;
        self.sample()?;
        self.index(&[])?;
        self.search(&[])?;
        self.eval(&EvalArgs::default())?;
        if self.cfg.systems.len() >= 2 {
            self.compare(&CompareArgs::default())?;
        }
        self.report()
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct PoolArgs {
    /// NGHS1 hidden-state file.
    #[arg(long)]
    pub hidden_states: PathBuf,
    /// JSON map of document id to window byte offsets.
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub mode: PoolingModeArg,
    /// Attention head JSON, `{"dim": d, "w": [...]}`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// System name for the pooled embeddings.
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PoolingModeArg {
    Mean,
    Attention,
}

impl From<PoolingModeArg> for PoolingMode {
    fn from(m: PoolingModeArg) -> Self {
        match m {
            PoolingModeArg::Mean => PoolingMode::Mean,
            PoolingModeArg::Attention => PoolingMode::Attention,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct EvalArgs {
    /// Evaluate this run file instead of the staged runs.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// System name for `--run`; defaults to the file stem.
    #[arg(long, requires = "run")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub b: Option<String>,
    /// Comma-separated cells such as `ndcg@10,p@10,hit@10`.
    #[arg(long)]
    pub metrics: Option<String>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    /// Directory to write the dataset into.
    #[arg(long)]
    pub dest: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_docs: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Writes a synthetic dataset with a ready-to-use config.
pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_docs: args.n_docs,
        dim: args.dim,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let data = generate(&cfg)?;
    let dest = &args.dest;
    let mut buf = Vec::new();
    write_metadata_jsonl(&data.corpus, &mut buf).map_err(|e| CliError::io(dest, e))?;
    write_bytes(&dest.join("metadata.jsonl"), &buf)?;

    let mut systems = Vec::new();
    for (name, _) in &cfg.systems {
        let store = &data.systems[name];
        let rel = format!("embeddings/{name}.jsonl");
        let mut buf = Vec::new();
        write_embeddings_jsonl(store, &mut buf).map_err(|e| CliError::io(dest, e))?;
        write_bytes(&dest.join(&rel), &buf)?;
        systems.push(serde_json::json!({ "name": name, "embeddings": rel }));
    }

    let states = hidden_states(&data.latent, 4, 0.5, args.seed.wrapping_add(1))?;
    let mut bin = Vec::new();
    let mut writer = HiddenStateWriter::new(&mut bin, args.dim).map_err(|e| CliError::io(dest, e))?;
    for doc in &states {
        for w in &doc.windows {
            writer.write_window(&doc.doc_id, w)?;
        }
    }
    let layout = writer.finish().map_err(|e| CliError::io(dest, e))?;
    write_bytes(&dest.join("hidden_states.bin"), &bin)?;
    write_json(&dest.join("hidden_states.layout.json"), &layout)?;
    write_json(
        &dest.join("head.json"),
        &AttentionHead::new(vec![0.0; args.dim])?,
    )?;

    let config = serde_json::json!({
        "metadata": "metadata.jsonl",
        "systems": systems,
        "out_dir": "out",
        "query_n": (args.n_docs / 2).max(1),
        "bootstrap_b": 1000,
        "seeds": { "sampling": 1, "bootstrap": 2 },
    });
    write_json(&dest.join("config.json"), &config)
}
