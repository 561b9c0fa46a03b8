//! Command-line front end: property checks, restructuring, multiplication,
//! depth reduction, PCFG compilation, oracle verification, and fixture
//! generation. Every command is deterministic given identical inputs and
//! flags; verification exit codes signal pass/fail.

use clap::{Parser, Subcommand, ValueEnum};
use pcr::circuit::{
    marginalize_evaluate, parse_circuit, serialize_circuit, validate, Circuit, PropertyReport,
};
use pcr::generate::{random_structured_pc, random_vtree, rng_for, GenOptions, VtreeShape};
use pcr::grammar::{compile_pcfg, compile_pcfg_normalized, Pcfg};
use pcr::product::{multiply, multiply_onthefly, multiply_same_vtree};
use pcr::restructure::{depth_reduce, RestructureOptions};
use pcr::vtree::Vtree;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pcr", about = "Probabilistic circuit restructuring toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Requirement {
    Smooth,
    Decomposable,
    Structured,
    Deterministic,
    Contiguous,
    Alternating,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MultiplyMode {
    SameVtree,
    Restructure,
    Onthefly,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Shape {
    Random,
    Contiguous,
    Linear,
    Balanced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Plain,
    Deterministic,
}

#[derive(Subcommand)]
enum Command {
    /// Print the property report and stats of a circuit file.
    Check {
        path: PathBuf,
        /// Properties that must hold for exit code 0.
        #[arg(long, value_delimiter = ',')]
        require: Vec<Requirement>,
    },
    /// Rebuild a circuit over a target vtree.
    Restructure {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        source_vtree: PathBuf,
        #[arg(long)]
        target_vtree: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = pcr::DEFAULT_TABLE_BUDGET)]
        budget: u64,
    },
    /// Multiply two circuits; prints the partition constant.
    Multiply {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum)]
        mode: MultiplyMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = pcr::DEFAULT_TABLE_BUDGET)]
        budget: u64,
    },
    /// Restructure to a balanced vtree of logarithmic depth.
    DepthReduce {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        source_vtree: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = pcr::DEFAULT_TABLE_BUDGET)]
        budget: u64,
    },
    /// Compile a CNF grammar into a contiguous circuit for fixed length.
    Pcfg {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
        /// Renormalize into a proper distribution over length-n strings.
        #[arg(long)]
        normalize: bool,
    },
    /// Compare two circuits by exhaustive enumeration.
    Verify {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Compare distributions up to a constant factor.
        #[arg(long)]
        proportional: bool,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Generate a random structured circuit fixture (seeded via --seed or
    /// PCR_SEED).
    Gen {
        #[arg(long)]
        num_vars: usize,
        #[arg(long, default_value_t = 2)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        domain: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Shape::Random)]
        shape: Shape,
        #[arg(long, value_enum, default_value_t = Kind::Plain)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vtree_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_circuit(path: &Path) -> Result<Circuit, String> {
    parse_circuit(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_vtree(path: &Path) -> Result<Vtree, String> {
    Vtree::parse(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_report(rep: &PropertyReport, c: &Circuit) {
    let st = c.stats();
    println!("smooth {}", rep.smooth);
    println!("decomposable {}", rep.decomposable);
    println!("structured {}", rep.structured);
    println!(
        "deterministic {}",
        rep.deterministic
            .map(|d| d.to_string())
            .unwrap_or_else(|| "unchecked".into())
    );
    println!("alternating {}", rep.alternating);
    println!("binary_products {}", rep.binary_products);
    println!("contiguous {}", rep.contiguous);
    if let Some((node, what)) = rep.offending {
        println!("offending_node {node} ({what})");
    }
    println!(
        "size {} depth {} sums {} prods {} leaves {}",
        st.size, st.depth, st.num_sum, st.num_prod, st.num_leaf
    );
    if let Some(v) = &rep.vtree {
        print!("vtree {}", v.serialize());
    }
}

fn run(cmd: Command) -> Result<ExitCode, String> {
    match cmd {
        Command::Check { path, require } => {
            let c = load_circuit(&path)?;
            let rep = validate(&c);
            print_report(&rep, &c);
            let ok = require.iter().all(|r| match r {
                Requirement::Smooth => rep.smooth,
                Requirement::Decomposable => rep.decomposable,
                Requirement::Structured => rep.structured,
                Requirement::Deterministic => rep.deterministic == Some(true),
                Requirement::Contiguous => rep.contiguous,
                Requirement::Alternating => rep.alternating && rep.binary_products,
            });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Restructure {
            circuit,
            source_vtree,
            target_vtree,
            out,
            labels_out,
            report,
            budget,
        } => {
            let c = load_circuit(&circuit)?;
            let v_src = load_vtree(&source_vtree)?;
            let v_tgt = load_vtree(&target_vtree)?;
            let c = pcr::circuit::normalize(&c).map_err(|e| e.to_string())?;
            let opts = RestructureOptions {
                budget,
                dense: false,
            };
            let bn = pcr::bn::pc_to_bn(&c, &v_src).map_err(|e| e.to_string())?;
            let lw = pcr::labelling::compute_label(&bn, &v_tgt).map_err(|e| e.to_string())?;
            let (res, rep) = pcr::restructure::restructure_with_bn(&c, &bn, &lw, &opts)
                .map_err(|e| e.to_string())?;
            write(&out, &serialize_circuit(&res))?;
            if let Some(p) = labels_out {
                write(&p, &lw.serialize())?;
            }
            if let Some(p) = report {
                write(&p, &rep.render())?;
            }
            println!("restructured size {} M {} M' {}", rep.size_out, rep.m, rep.m_prime);
            Ok(ExitCode::SUCCESS)
        }
        Command::Multiply {
            a,
            b,
            mode,
            out,
            budget,
        } => {
            let ca = pcr::circuit::normalize(&load_circuit(&a)?).map_err(|e| e.to_string())?;
            let cb = pcr::circuit::normalize(&load_circuit(&b)?).map_err(|e| e.to_string())?;
            let vtree_of = |c: &Circuit, which: &str| -> Result<Vtree, String> {
                validate(c)
                    .vtree
                    .ok_or_else(|| format!("circuit {which} is not structured"))
            };
            let opts = RestructureOptions {
                budget,
                dense: false,
            };
            let (prod, partition) = match mode {
                MultiplyMode::SameVtree => {
                    let va = vtree_of(&ca, "a")?;
                    multiply_same_vtree(&ca, &cb, &va).map_err(|e| e.to_string())?
                }
                MultiplyMode::Restructure => {
                    let va = vtree_of(&ca, "a")?;
                    let vb = vtree_of(&cb, "b")?;
                    multiply(&ca, &va, &cb, &vb, &opts).map_err(|e| e.to_string())?
                }
                MultiplyMode::Onthefly => {
                    let va = vtree_of(&ca, "a")?;
                    multiply_onthefly(&ca, &va, &cb).map_err(|e| e.to_string())?
                }
            };
            write(&out, &serialize_circuit(&prod))?;
            println!("partition {partition}");
            Ok(ExitCode::SUCCESS)
        }
        Command::DepthReduce {
            circuit,
            source_vtree,
            out,
            report,
            budget,
        } => {
            let c = load_circuit(&circuit)?;
            let v_src = load_vtree(&source_vtree)?;
            let c = pcr::circuit::normalize(&c).map_err(|e| e.to_string())?;
            let opts = RestructureOptions {
                budget,
                dense: false,
            };
            let (res, rep, lw) = depth_reduce(&c, &v_src, &opts).map_err(|e| e.to_string())?;
            write(&out, &serialize_circuit(&res))?;
            if let Some(p) = report {
                let mut text = rep.render();
                text.push_str("target_vtree_with_labels\n");
                text.push_str(&lw.serialize());
                write(&p, &text)?;
            }
            let depth = res.stats().depth;
            println!(
                "depth-reduced size {} depth {} vtree_depth {} M' {}",
                rep.size_out,
                depth,
                lw.vtree.depth(),
                rep.m_prime
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Pcfg {
            grammar,
            length,
            out,
            normalize,
        } => {
            let g = Pcfg::parse(&read(&grammar)?).map_err(|e| e.to_string())?;
            let c = if normalize {
                let (c, mass) = compile_pcfg_normalized(&g, length).map_err(|e| e.to_string())?;
                println!("length_mass {mass}");
                c
            } else {
                compile_pcfg(&g, length).map_err(|e| e.to_string())?
            };
            let st = c.stats();
            println!("compiled size {} nodes {}", st.size, c.nodes.len());
            write(&out, &serialize_circuit(&c))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            a,
            b,
            proportional,
            tol,
        } => {
            let ca = load_circuit(&a)?;
            let cb = load_circuit(&b)?;
            let dev = if proportional {
                let (norm_a, mass_a) =
                    pcr::circuit::renormalize_mass(&ca).map_err(|e| e.to_string())?;
                let (norm_b, mass_b) =
                    pcr::circuit::renormalize_mass(&cb).map_err(|e| e.to_string())?;
                println!("constant {}", mass_a / mass_b);
                pcr::oracle::check_equivalence(&norm_a, &norm_b, tol)
                    .map_err(|e| e.to_string())?
            } else {
                pcr::oracle::check_equivalence(&ca, &cb, tol).map_err(|e| e.to_string())?
            };
            println!("max_deviation {dev}");
            Ok(if dev <= tol {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Gen {
            num_vars,
            hidden,
            domain,
            seed,
            shape,
            kind,
            out,
            vtree_out,
        } => {
            let seed = seed
                .or_else(|| {
                    std::env::var("PCR_SEED")
                        .ok()
                        .and_then(|s| s.parse().ok())
                })
                .unwrap_or(0);
            let mut rng = rng_for(seed);
            let shape = match shape {
                Shape::Random => VtreeShape::Random,
                Shape::Contiguous => VtreeShape::RandomContiguous,
                Shape::Linear => VtreeShape::RightLinear,
                Shape::Balanced => VtreeShape::Balanced,
            };
            let v = random_vtree(num_vars, shape, &mut rng);
            let mut opts = GenOptions::new(hidden, seed).domain(domain);
            if kind == Kind::Deterministic {
                opts = opts.deterministic();
            }
            let c = random_structured_pc(&v, &opts);
            write(&out, &serialize_circuit(&c))?;
            if let Some(p) = vtree_out {
                write(&p, &v.serialize())?;
            }
            // marginal sanity: the fixture is a proper distribution
            let total = marginalize_evaluate(&c, &vec![None; num_vars])
                .map_err(|e| e.to_string())?;
            println!("generated n {} hidden {} total_mass {total}", num_vars, hidden);
            Ok(ExitCode::SUCCESS)
        }
    }
}
