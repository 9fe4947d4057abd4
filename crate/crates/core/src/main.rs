use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dfmap::balancer::{allocate, AllocError, Allocation, ResourceBudget};
use dfmap::model_ir::{
    load_params, parse_architecture, to_architecture_text, ModelGraph, ParamSet, Tensor,
};
use dfmap::oracle::{run_network_ref, Mode, NetworkOutput};
use dfmap::report::{describe, render_report, Format, SimReportDoc};
use dfmap::stream_sim::{build_pipeline_with, SimError, SimOptions};
use dfmap::synth::{random_graph, random_input, random_params, GraphLimits};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage, parse or validation error, or missing file
  3  infeasible resource budget
  4  malformed or mismatched tensor file
  5  simulator output differs from the reference (--oracle)";

#[derive(Parser)]
#[command(name = "dfmap", version, about = "Map quantized CNNs onto a streaming FPGA dataflow model", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate PEs/SIMD lanes under a budget and describe the pipeline.
    #[command(after_help = EXIT_CODES)]
    Compile {
        arch: PathBuf,
        params: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Where to write the description (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "machine")]
        format: Format,
    },
    /// Compile, then simulate one frame cycle by cycle.
    #[command(after_help = EXIT_CODES)]
    Simulate {
        arch: PathBuf,
        params: PathBuf,
        input: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Output tensor file.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the report (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
        /// Compare the output with the layer-wise reference.
        #[arg(long)]
        oracle: bool,
    },
    /// Run the layer-wise reference.
    #[command(after_help = EXIT_CODES)]
    Oracle {
        arch: PathBuf,
        params: PathBuf,
        input: PathBuf,
        #[arg(long, value_enum, default_value = "quantized")]
        mode: OracleMode,
        /// Tensor file (quantized) or JSON with `dims` and `values` (real).
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a random architecture, parameter set and input to a directory.
    #[command(after_help = EXIT_CODES)]
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Quantized,
    Real,
}

#[derive(Args)]
struct BudgetArgs {
    /// JSON resource budget; flags below override its fields.
    #[arg(long)]
    budget: Option<PathBuf>,
    /// DSP blocks [default: 840].
    #[arg(long)]
    dsp: Option<u64>,
    /// 18 kbit BRAM blocks [default: 445].
    #[arg(long)]
    bram: Option<u64>,
    /// LUTs [default: 203800].
    #[arg(long)]
    lut: Option<u64>,
    /// DSP held back for the host design [default: 0].
    #[arg(long)]
    reserve_dsp: Option<u64>,
    /// BRAM held back for the host design [default: 0].
    #[arg(long)]
    reserve_bram: Option<u64>,
    /// LUT held back for the host design [default: 0].
    #[arg(long)]
    reserve_lut: Option<u64>,
    /// LUTs per binary or pooling MAC lane [default: 5].
    #[arg(long)]
    lut_per_binmac: Option<u64>,
    /// Fixed LUT overhead of every layer block [default: 64].
    #[arg(long)]
    lut_per_layer: Option<u64>,
    /// Clock frequency in MHz [default: 100].
    #[arg(long)]
    clock_mhz: Option<f64>,
    /// Depth of every inter-layer FIFO [default: twice the producer's c_out].
    #[arg(long)]
    fifo_depth: Option<usize>,
}

impl BudgetArgs {
    fn budget(&self) -> Result<ResourceBudget, Failure> {
        let mut b = match &self.budget {
            Some(path) => serde_json::from_slice(&read(path)?)
                .map_err(|e| fail(2, format!("{}: {e}", path.display())))?,
            None => ResourceBudget::default(),
        };
        let set = |field: &mut u64, v: Option<u64>| {
            if let Some(v) = v {
                *field = v;
            }
        };
        set(&mut b.dsp, self.dsp);
        set(&mut b.bram, self.bram);
        set(&mut b.lut, self.lut);
        set(&mut b.reserved.dsp, self.reserve_dsp);
        set(&mut b.reserved.bram, self.reserve_bram);
        set(&mut b.reserved.lut, self.reserve_lut);
        set(&mut b.lut_per_binary_mac, self.lut_per_binmac);
        set(&mut b.lut_per_layer, self.lut_per_layer);
        if let Some(c) = self.clock_mhz {
            b.clock_mhz = c;
        }
        if self.fifo_depth.is_some() {
            b.fifo_depth = self.fifo_depth;
        }
        if b.clock_mhz.is_nan() || b.clock_mhz <= 0.0 {
            return Err(fail(2, "clock frequency must be positive"));
        }
        Ok(b)
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(arch: &Path, params: &Path) -> Result<(ModelGraph, ParamSet), Failure> {
    let text =
        String::from_utf8(read(arch)?).map_err(|e| fail(2, format!("{}: {e}", arch.display())))?;
    let graph =
        parse_architecture(&text).map_err(|e| fail(2, format!("{}: {e}", arch.display())))?;
    let params = load_params(&read(params)?, &graph)
        .map_err(|e| fail(2, format!("{}: {e}", params.display())))?;
    Ok((graph, params))
}

fn load_input(path: &Path, graph: &ModelGraph) -> Result<Tensor, Failure> {
    let t = Tensor::from_bytes(&read(path)?)
        .map_err(|e| fail(4, format!("{}: {e}", path.display())))?;
    if t.dims() != graph.input_dims() || t.precision() != graph.input_fmt() {
        return Err(fail(
            4,
            format!(
                "{}: tensor {:?} in {} does not match network input {:?} in {}",
                path.display(),
                t.dims(),
                t.precision(),
                graph.input_dims(),
                graph.input_fmt()
            ),
        ));
    }
    Ok(t)
}

fn compile(graph: &ModelGraph, budget: &ResourceBudget) -> Result<Allocation, Failure> {
    allocate(graph, budget).map_err(|e| match e {
        AllocError::Reserve { .. } | AllocError::Infeasible { .. } => fail(3, e.to_string()),
    })
}

#[derive(Serialize)]
struct RealOutput {
    dims: (usize, usize, usize),
    values: Vec<f64>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Compile {
            arch,
            params,
            budget,
            out,
            format,
        } => {
            let (graph, _) = load_model(&arch, &params)?;
            let budget = budget.budget()?;
            let alloc = compile(&graph, &budget)?;
            emit(
                out.as_deref(),
                &render_report(&describe(&graph, &alloc, &budget), format),
            )
        }
        Command::Simulate {
            arch,
            params,
            input,
            budget,
            out,
            report,
            format,
            oracle,
        } => {
            let (graph, params) = load_model(&arch, &params)?;
            let input = load_input(&input, &graph)?;
            let budget = budget.budget()?;
            let alloc = compile(&graph, &budget)?;
            let opts = SimOptions {
                clock_mhz: budget.clock_mhz,
                fifo_depth: budget.fifo_depth,
                ..SimOptions::default()
            };
            let sim =
                build_pipeline_with(&graph, &alloc.plan, &params, opts).map_err(|e| match e {
                    SimError::FifoDepth { .. } => fail(2, e.to_string()),
                    _ => fail(1, e.to_string()),
                })?;
            let outcome = sim.run(&input).map_err(|e| fail(1, e.to_string()))?;
            write(&out, &outcome.output.to_bytes())?;
            if oracle {
                let expect = run_network_ref(&graph, &params, &input, Mode::Quantized)
                    .map_err(|e| fail(1, e.to_string()))?;
                if expect != NetworkOutput::Quantized(outcome.output.clone()) {
                    return Err(fail(5, "simulator output differs from the reference"));
                }
            }
            let doc = SimReportDoc::new(&graph, &outcome.timing, &alloc, &budget, oracle);
            emit(report.as_deref(), &render_report(&doc, format))
        }
        Command::Oracle {
            arch,
            params,
            input,
            mode,
            out,
        } => {
            let (graph, params) = load_model(&arch, &params)?;
            let input = load_input(&input, &graph)?;
            let mode = match mode {
                OracleMode::Quantized => Mode::Quantized,
                OracleMode::Real => Mode::Real,
            };
            match run_network_ref(&graph, &params, &input, mode)
                .map_err(|e| fail(1, e.to_string()))?
            {
                NetworkOutput::Quantized(t) => write(&out, &t.to_bytes()),
                NetworkOutput::Real(t) => {
                    let doc = RealOutput {
                        dims: t.dims(),
                        values: t.data,
                    };
                    let mut text = serde_json::to_string(&doc).expect("real output serializes");
                    text.push('\n');
                    write(&out, text.as_bytes())
                }
            }
        }
        Command::Synth { seed, out_dir } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graph = random_graph(&mut rng, &GraphLimits::default());
            let params = random_params(&mut rng, &graph);
            let input = random_input(&mut rng, &graph);
            fs::create_dir_all(&out_dir)
                .map_err(|e| fail(1, format!("{}: {e}", out_dir.display())))?;
            write(
                &out_dir.join("arch.json"),
                to_architecture_text(&graph).as_bytes(),
            )?;
            write(&out_dir.join("params.nn2c"), &params.to_bytes(&graph))?;
            write(&out_dir.join("input.nntf"), &input.to_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dfmap: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
