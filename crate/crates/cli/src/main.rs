use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ppsm::bench::{self, InstanceConfig, ProtocolBenchConfig, TrialRow};
use ppsm::fasta::{self, Sanitize};
use ppsm::net::{self, Exchange, ServerContext};
use ppsm::oracle::EditMix;
use ppsm::{
    build_dictionary, keygen, GramConfig, GramDictionary, ProtocolParams, Scheme, SecretKey,
    VerdictMode,
};

#[derive(Parser)]
#[command(name = "ppsm", version, about = "Privacy-preserving approximate sequence matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair.
    Keygen(KeygenArgs),
    /// Train a gram dictionary on a FASTA corpus.
    Dict(DictArgs),
    /// Derive the public protocol parameters.
    Params(ParamsArgs),
    /// Answer queries against a server sequence.
    Serve(ServeArgs),
    /// Ask whether a client sequence matches the server's.
    Query(QueryArgs),
    /// Edit-count versus filter-distance correlation experiment.
    BenchCorr(BenchCorrArgs),
    /// Timed end-to-end runs over loopback.
    BenchProto(BenchProtoArgs),
    /// Summarize a correlation CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SequenceArgs {
    /// FASTA file holding the sequence.
    #[arg(long)]
    fasta: PathBuf,
    /// Record id; defaults to the first record.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "ACGT")]
    alphabet: String,
    /// Drop symbols outside the alphabet instead of failing.
    #[arg(long)]
    sanitize: bool,
}

impl SequenceArgs {
    fn load(&self) -> Result<Vec<u8>> {
        let file = read_fasta(&self.fasta, &self.alphabet, self.sanitize)?;
        let rec = match &self.id {
            Some(id) => file.record(id)?,
            None => file
                .records
                .first()
                .with_context(|| format!("{} holds no records", self.fasta.display()))?,
        };
        Ok(rec.sequence.clone())
    }
}

fn read_fasta(path: &Path, alphabet: &str, sanitize: bool) -> Result<fasta::FastaFile> {
    let mode = if sanitize { Sanitize::Drop } else { Sanitize::Reject };
    let file = fasta::read(path, alphabet.to_ascii_uppercase().as_bytes(), mode)
        .with_context(|| format!("reading {}", path.display()))?;
    if file.dropped > 0 {
        eprintln!("warning: dropped {} symbols outside the alphabet", file.dropped);
    }
    Ok(file)
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value_t = 2048)]
    bits: u64,
    /// Public key output (PPHK).
    #[arg(long)]
    public: PathBuf,
    /// Secret key output (PPHS).
    #[arg(long)]
    secret: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DictArgs {
    #[arg(long)]
    fasta: PathBuf,
    /// Restrict training to these record ids.
    #[arg(long)]
    id: Vec<String>,
    #[arg(long, default_value = "ACGT")]
    alphabet: String,
    #[arg(long)]
    sanitize: bool,
    #[arg(long, default_value_t = 2)]
    q_min: usize,
    #[arg(long, default_value_t = 40)]
    q_max: usize,
    /// Use plain grams instead of position-tagged grams.
    #[arg(long)]
    no_positional: bool,
    /// Minimum corpus count for a gram to be kept.
    #[arg(long, default_value_t = 1)]
    prune: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    dict: PathBuf,
    /// Reference FASTA used for sizing and threshold calibration.
    #[arg(long)]
    fasta: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "ACGT")]
    alphabet: String,
    #[arg(long)]
    sanitize: bool,
    /// Target false-positive rate.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// Expected gram count; defaults to reference length + q_min - 1.
    #[arg(long)]
    n_v: Option<u64>,
    #[arg(long, default_value_t = 10)]
    e_max: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Shared {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[command(flatten)]
    sequence: SequenceArgs,
}

impl Shared {
    fn load(&self) -> Result<(ProtocolParams, GramDictionary, Vec<u8>)> {
        let params = load_params(&self.params)?;
        let dict = load_dict(&self.dict)?;
        params
            .check_dictionary(&dict)
            .context("dictionary does not belong to these parameters")?;
        Ok((params, dict, self.sequence.load()?))
    }
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Per-session socket timeout in seconds.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Exit after this many sessions.
    #[arg(long)]
    max_sessions: Option<usize>,
    /// Offline mode: answer the request file instead of listening.
    #[arg(long = "in", requires = "out")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    shared: Shared,
    /// Secret key file (PPHS).
    #[arg(long)]
    keys: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Offline mode, step 1: write the request file and stop.
    #[arg(long, conflicts_with = "input")]
    out: Option<PathBuf>,
    /// Offline mode, step 2: read the response file.
    #[arg(long = "in", requires = "request")]
    input: Option<PathBuf>,
    /// Request file written in step 1.
    #[arg(long)]
    request: Option<PathBuf>,
    /// Decrypt every response element even after finding a zero.
    #[arg(long)]
    full_scan: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchCorrArgs {
    /// Reference sequence; a random one of --length symbols otherwise.
    #[arg(long, requires = "dict")]
    fasta: Option<PathBuf>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long, requires = "dict")]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    length: usize,
    #[arg(long, default_value_t = 220)]
    trials: usize,
    /// Comma-separated edit counts.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// `sub`, `mixed`, or `S,I,D` percentages.
    #[arg(long, default_value = "sub")]
    mix: String,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, default_value_t = 10)]
    e_max: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchProtoArgs {
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    e_max: u64,
    /// Substitutions applied to the client copy.
    #[arg(long, default_value_t = 5)]
    client_edits: usize,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 2048)]
    bits: u64,
    /// Existing secret key; a fresh one is generated otherwise.
    #[arg(long)]
    keys: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    csv: PathBuf,
}

fn write_new(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_params(path: &Path) -> Result<ProtocolParams> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ProtocolParams::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn load_dict(path: &Path) -> Result<GramDictionary> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    GramDictionary::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn load_secret(path: &Path) -> Result<SecretKey> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    SecretKey::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_mix(s: &str) -> Result<EditMix> {
    match s {
        "sub" => Ok(EditMix::SUBSTITUTION_ONLY),
        "mixed" => Ok(EditMix::MIXED),
        _ => {
            let parts: Vec<u8> = s
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .context("mix must be `sub`, `mixed` or S,I,D")?;
            match parts[..] {
                [a, b, c] => EditMix::new(a, b, c).context("mix percentages must sum to 100"),
                _ => bail!("mix must have three components"),
            }
        }
    }
}

fn cmd_keygen(a: KeygenArgs) -> Result<ExitCode> {
    let mut rng = ppsm::rng::session_rng()?;
    let (pk, sk) = keygen(a.bits, &mut rng)?;
    write_new(&a.public, &pk.to_bytes(), a.force)?;
    write_new(&a.secret, &sk.to_bytes(), a.force)?;
    println!("{}-bit {} key pair written", pk.modulus_bits(), pk.scheme().id());
    Ok(ExitCode::SUCCESS)
}

fn cmd_dict(a: DictArgs) -> Result<ExitCode> {
    let file = read_fasta(&a.fasta, &a.alphabet, a.sanitize)?;
    let corpus: Vec<&[u8]> = if a.id.is_empty() {
        file.records.iter().map(|r| r.sequence.as_slice()).collect()
    } else {
        a.id
            .iter()
            .map(|id| Ok(file.record(id)?.sequence.as_slice()))
            .collect::<Result<_>>()?
    };
    let cfg = GramConfig::new(a.q_min, a.q_max, !a.no_positional)?;
    let dict = build_dictionary(corpus, cfg, a.prune)?;
    write_new(&a.out, &dict.to_bytes()?, a.force)?;
    println!("dictionary: {} grams, digest {}", dict.len(), hex(&dict.digest()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_params(a: ParamsArgs) -> Result<ExitCode> {
    let dict = load_dict(&a.dict)?;
    let reference = match &a.fasta {
        Some(path) => SequenceArgs {
            fasta: path.clone(),
            id: a.id.clone(),
            alphabet: a.alphabet.clone(),
            sanitize: a.sanitize,
        }
        .load()?,
        None => Vec::new(),
    };
    let n_v = match (a.n_v, reference.is_empty()) {
        (Some(n), _) => n,
        (None, false) => bench::expected_elements(reference.len(), dict.config().q_min()),
        (None, true) => bail!("pass --fasta or --n-v"),
    };
    let params = ProtocolParams::derive(&dict, a.p, n_v, a.e_max, &reference, Scheme::Paillier)?;
    write_new(&a.out, &params.to_bytes(), a.force)?;
    println!("l = {}", params.bloom().length_bits());
    println!("k = {}", params.bloom().hash_count());
    println!("hash = {}", params.bloom().hash_name());
    println!("p = {}", params.bloom().target_fp());
    println!("n_v = {n_v}");
    println!("e_max = {}", params.e_max());
    println!("t_max = {}", params.t_max());
    println!("digest = {}", hex(&params.digest()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    let (params, dict, sequence) = a.shared.load()?;
    let ctx = ServerContext::new(&sequence, &dict, params)?;
    let mut streams = ppsm::rng::session_streams(ppsm::rng::session_rng()?);
    if let Some(input) = &a.input {
        let out = a.out.as_ref().expect("clap enforces --out");
        let request = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
        let (reply, outcome) = net::serve_offline(&request, &ctx, &mut streams());
        write_new(out, &reply, a.force)?;
        eprintln!("{outcome:?}");
        return Ok(if outcome.is_responded() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }
    let listener = TcpListener::bind((a.host.as_str(), a.port))
        .with_context(|| format!("binding {}:{}", a.host, a.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    net::serve(
        listener,
        Arc::new(ctx),
        Some(Duration::from_secs(a.timeout)),
        a.max_sessions,
        streams,
        |peer, outcome| eprintln!("{peer}: {outcome:?}"),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_query(a: QueryArgs) -> Result<ExitCode> {
    let (params, dict, sequence) = a.shared.load()?;
    let sk = load_secret(&a.keys)?;
    let mode = if a.full_scan {
        VerdictMode::FullScan
    } else {
        VerdictMode::default()
    };
    let mut rng = ppsm::rng::session_rng()?;

    let (prepared, exchange) = if let Some(resp_path) = &a.input {
        let req_path = a.request.as_ref().expect("clap enforces --request");
        let request = fs::read(req_path)?;
        let query = net::parse_request(&request)?;
        if query.params != params {
            bail!("request was made under different parameters");
        }
        if query.pk != sk.public() {
            bail!("request was made under a different key");
        }
        let response_bytes = fs::read(resp_path)?;
        let response = net::parse_response(&response_bytes, &query.pk)?;
        let prepared = net::PreparedQuery {
            query_ciphertexts: query.filter.cells.len() + 1,
            state: ppsm::ClientState::new(sk, query.session_id, params.t_max()),
            pk: query.pk,
            request,
            encrypt: Duration::ZERO,
        };
        let ex = Exchange {
            response,
            bytes_sent: prepared.request.len(),
            bytes_received: response_bytes.len(),
            elapsed: Duration::ZERO,
        };
        (prepared, ex)
    } else {
        let prepared = net::prepare_query(&sequence, &dict, &params, &sk, &mut rng)?;
        if let Some(out) = &a.out {
            write_new(out, &prepared.request, a.force)?;
            eprintln!(
                "request written: {} bytes, {} ciphertexts, encrypt {:.3}s",
                prepared.request.len(),
                prepared.query_ciphertexts,
                prepared.encrypt.as_secs_f64()
            );
            return Ok(ExitCode::SUCCESS);
        }
        let ex = net::exchange_tcp(
            (a.host.as_str(), a.port),
            &prepared.request,
            &prepared.pk,
            Some(Duration::from_secs(a.timeout)),
        )?;
        (prepared, ex)
    };

    let report = net::finish_query(&prepared, exchange, mode)?;
    println!("{}", if report.verdict.matched { "MATCH" } else { "NO-MATCH" });
    eprintln!("bytes sent: {}", report.bytes_sent);
    eprintln!("bytes received: {}", report.bytes_received);
    eprintln!(
        "ciphertexts: {} sent, {} received",
        report.query_ciphertexts, report.response_ciphertexts
    );
    eprintln!("encrypt: {:.3}s", report.encrypt.as_secs_f64());
    eprintln!("transfer: {:.3}s", report.transfer.as_secs_f64());
    eprintln!(
        "decrypt: {:.3}s ({} decryptions)",
        report.decrypt.as_secs_f64(),
        report.verdict.decryptions
    );
    Ok(if report.verdict.matched {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn print_summary(rows: &[TrialRow]) {
    let s: ppsm::CorrelationSummary = bench::summarize(rows);
    println!("trials: {}", s.trials);
    let fmt = |r: Option<f64>| r.map_or("undefined".to_owned(), |r| format!("{r:.4}"));
    println!("pearson(edits, bloom_hamming): {}", fmt(s.pearson_edits));
    println!("pearson(levenshtein, bloom_hamming): {}", fmt(s.pearson_levenshtein));
    println!("edits\ttrials\tmean_hamming\tvar_hamming\tmean_levenshtein\tmatch_rate");
    for e in &s.per_edit {
        println!(
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.3}",
            e.edits, e.trials, e.mean_hamming, e.var_hamming, e.mean_levenshtein, e.match_rate
        );
    }
}

fn cmd_bench_corr(a: BenchCorrArgs) -> Result<ExitCode> {
    let mix = parse_mix(&a.mix)?;
    let grid = a.grid.clone().unwrap_or_else(bench::default_edit_grid);
    if grid.is_empty() {
        bail!("edit grid is empty");
    }
    let (reference, dict, params) = match (&a.fasta, &a.dict) {
        (Some(path), Some(dict_path)) => {
            let reference = SequenceArgs {
                fasta: path.clone(),
                id: a.id.clone(),
                alphabet: "ACGT".into(),
                sanitize: true,
            }
            .load()?;
            let dict = load_dict(dict_path)?;
            let params = match &a.params {
                Some(p) => load_params(p)?,
                None => ProtocolParams::derive(
                    &dict,
                    a.p,
                    bench::expected_elements(reference.len(), dict.config().q_min()),
                    a.e_max,
                    &reference,
                    Scheme::Paillier,
                )?,
            };
            (reference, dict, params)
        }
        _ => {
            let mut cfg = InstanceConfig::desk(a.length, a.e_max, a.seed);
            cfg.target_fp = a.p;
            let inst = bench::build_instance(&cfg)?;
            (inst.reference, inst.dict, inst.params)
        }
    };
    eprintln!(
        "length {}, l = {}, t_max = {}",
        reference.len(),
        params.bloom().length_bits(),
        params.t_max()
    );
    let records = bench::bench_correlation(&reference, &dict, &params, a.trials, &grid, mix, a.seed)?;
    let rows: Vec<TrialRow> = records.iter().map(TrialRow::from).collect();
    if let Some(out) = &a.out {
        let mut buf = Vec::new();
        bench::write_csv(&rows, &mut buf)?;
        write_new(out, &buf, a.force)?;
    }
    print_summary(&rows);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench_proto(a: BenchProtoArgs) -> Result<ExitCode> {
    let mut rng = ppsm::rng::session_rng()?;
    let sk = match &a.keys {
        Some(p) => load_secret(p)?,
        None => keygen(a.bits, &mut rng)?.1,
    };
    let cfg = ProtocolBenchConfig {
        lengths: a.lengths.clone(),
        e_max: a.e_max,
        client_edits: a.client_edits,
        trials: a.trials,
        seed: a.seed,
    };
    let rows = bench::bench_protocol(&cfg, &sk, &mut rng)?;
    if let Some(out) = &a.out {
        let mut buf = Vec::new();
        bench::write_protocol_csv(&rows, &mut buf)?;
        write_new(out, &buf, a.force)?;
    }
    println!("length\tl\tt_max\tc2s_bytes\ts2c_bytes\tclient_s\tserver_s\tmatched\td");
    for r in &rows {
        let client = r.encrypt + r.decrypt;
        println!(
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{}\t{}",
            r.length,
            r.filter_bits,
            r.t_max,
            r.client_to_server_bytes,
            r.server_to_client_bytes,
            client.as_secs_f64(),
            r.server.as_secs_f64(),
            r.matched,
            r.plaintext_distance
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let file = fs::File::open(&a.csv).with_context(|| format!("opening {}", a.csv.display()))?;
    let rows = bench::read_csv(file)?;
    print_summary(&rows);
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Keygen(a) => cmd_keygen(a),
        Command::Dict(a) => cmd_dict(a),
        Command::Params(a) => cmd_params(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Query(a) => cmd_query(a),
        Command::BenchCorr(a) => cmd_bench_corr(a),
        Command::BenchProto(a) => cmd_bench_proto(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
