//! Python bindings: circuits and vtrees as classes plus the main transforms.
//! File formats match the CLI exactly, so objects round-trip between the two.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pcr::circuit;
use pcr::restructure::RestructureOptions;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A probabilistic circuit.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Circuit {
    inner: circuit::Circuit,
}

/// A vtree over the circuit variables.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Vtree {
    inner: pcr::vtree::Vtree,
}

#[pymethods]
impl Circuit {
    /// Parse the textual circuit format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Circuit> {
        Ok(Circuit {
            inner: circuit::parse_circuit(text).map_err(err)?,
        })
    }

    fn serialize(&self) -> String {
        circuit::serialize_circuit(&self.inner)
    }

    fn num_vars(&self) -> usize {
        self.inner.num_vars
    }

    fn domains(&self) -> Vec<usize> {
        self.inner.domains.clone()
    }

    /// Probability of a full assignment.
    fn evaluate(&self, x: Vec<usize>) -> PyResult<f64> {
        circuit::evaluate(&self.inner, &x).map_err(err)
    }

    /// Marginal probability of a partial assignment (None = marginalized).
    fn marginalize(&self, x: Vec<Option<usize>>) -> PyResult<f64> {
        circuit::marginalize_evaluate(&self.inner, &x).map_err(err)
    }

    /// Canonical form: alternating layers, binary products.
    fn normalize(&self) -> PyResult<Circuit> {
        Ok(Circuit {
            inner: circuit::normalize(&self.inner).map_err(err)?,
        })
    }

    /// Property flags as a dict.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        use pyo3::types::PyDict;
        let rep = circuit::validate(&self.inner);
        let d = PyDict::new(py);
        d.set_item("smooth", rep.smooth)?;
        d.set_item("decomposable", rep.decomposable)?;
        d.set_item("structured", rep.structured)?;
        d.set_item("deterministic", rep.deterministic)?;
        d.set_item("alternating", rep.alternating)?;
        d.set_item("binary_products", rep.binary_products)?;
        d.set_item("contiguous", rep.contiguous)?;
        Ok(d)
    }

    /// Inferred vtree of a structured circuit.
    fn inferred_vtree(&self) -> PyResult<Vtree> {
        circuit::validate(&self.inner)
            .vtree
            .map(|v| Vtree { inner: v })
            .ok_or_else(|| err("circuit is not structured"))
    }

    /// (edge count, depth, sums, products, leaves)
    fn stats(&self) -> (usize, usize, usize, usize, usize) {
        let s = self.inner.stats();
        (s.size, s.depth, s.num_sum, s.num_prod, s.num_leaf)
    }
}

#[pymethods]
impl Vtree {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Vtree> {
        Ok(Vtree {
            inner: pcr::vtree::Vtree::parse(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn right_linear(n: usize) -> Vtree {
        Vtree {
            inner: pcr::vtree::Vtree::right_linear(n),
        }
    }

    #[staticmethod]
    fn balanced(n: usize) -> Vtree {
        Vtree {
            inner: pcr::vtree::Vtree::balanced(n),
        }
    }

    fn serialize(&self) -> String {
        self.inner.serialize()
    }

    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }

    fn is_contiguous(&self) -> bool {
        self.inner.is_contiguous()
    }

    fn is_right_linear(&self) -> bool {
        self.inner.is_right_linear()
    }
}

/// Rebuild a structured circuit over a target vtree; the distribution is
/// preserved exactly.
#[pyfunction]
fn restructure(c: &Circuit, source: &Vtree, target: &Vtree) -> PyResult<Circuit> {
    let normalized = circuit::normalize(&c.inner).map_err(err)?;
    let (out, _) = pcr::restructure::restructure_to_vtree(
        &normalized,
        &source.inner,
        &target.inner,
        &RestructureOptions::default(),
    )
    .map_err(err)?;
    Ok(Circuit { inner: out })
}

/// Restructure to a balanced vtree; returns (circuit, vtree_depth, m_prime).
#[pyfunction]
fn depth_reduce(c: &Circuit, source: &Vtree) -> PyResult<(Circuit, usize, usize)> {
    let normalized = circuit::normalize(&c.inner).map_err(err)?;
    let (out, rep, lw) = pcr::restructure::depth_reduce(
        &normalized,
        &source.inner,
        &RestructureOptions::default(),
    )
    .map_err(err)?;
    Ok((Circuit { inner: out }, lw.vtree.depth(), rep.m_prime))
}

/// Multiply two circuits; mode is "same-vtree", "restructure" or "onthefly".
/// Returns (normalized product, partition constant).
#[pyfunction]
fn multiply(a: &Circuit, b: &Circuit, mode: &str) -> PyResult<(Circuit, f64)> {
    let ca = circuit::normalize(&a.inner).map_err(err)?;
    let cb = circuit::normalize(&b.inner).map_err(err)?;
    let vtree_of = |c: &circuit::Circuit| -> PyResult<pcr::vtree::Vtree> {
        circuit::validate(c)
            .vtree
            .ok_or_else(|| err("factor is not structured"))
    };
    let (prod, partition) = match mode {
        "same-vtree" => {
            let v = vtree_of(&ca)?;
            pcr::product::multiply_same_vtree(&ca, &cb, &v).map_err(err)?
        }
        "restructure" => {
            let va = vtree_of(&ca)?;
            let vb = vtree_of(&cb)?;
            pcr::product::multiply(&ca, &va, &cb, &vb, &RestructureOptions::default())
                .map_err(err)?
        }
        "onthefly" => {
            let va = vtree_of(&ca)?;
            pcr::product::multiply_onthefly(&ca, &va, &cb).map_err(err)?
        }
        other => return Err(err(format!("unknown mode {other:?}"))),
    };
    Ok((Circuit { inner: prod }, partition))
}

/// Compile a grammar (textual format) for strings of the given length.
#[pyfunction]
#[pyo3(signature = (grammar, length, normalize=false))]
fn compile_pcfg(grammar: &str, length: usize, normalize: bool) -> PyResult<Circuit> {
    let g = pcr::grammar::Pcfg::parse(grammar).map_err(err)?;
    let inner = if normalize {
        pcr::grammar::compile_pcfg_normalized(&g, length)
            .map_err(err)?
            .0
    } else {
        pcr::grammar::compile_pcfg(&g, length).map_err(err)?
    };
    Ok(Circuit { inner })
}

/// Maximum relative deviation between two circuit distributions.
#[pyfunction]
fn check_equivalence(a: &Circuit, b: &Circuit) -> PyResult<f64> {
    pcr::oracle::check_equivalence(&a.inner, &b.inner, 1e-9).map_err(err)
}

/// Random structured circuit and its vtree (seeded).
#[pyfunction]
#[pyo3(signature = (num_vars, hidden, seed, domain=2))]
fn generate(num_vars: usize, hidden: usize, seed: u64, domain: usize) -> PyResult<(Circuit, Vtree)> {
    let mut rng = pcr::generate::rng_for(seed);
    let v = pcr::generate::random_vtree(
        num_vars,
        pcr::generate::VtreeShape::Random,
        &mut rng,
    );
    let opts = pcr::generate::GenOptions::new(hidden, seed).domain(domain);
    let c = pcr::generate::random_structured_pc(&v, &opts);
    Ok((Circuit { inner: c }, Vtree { inner: v }))
}

#[pymodule]
fn pcr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Circuit>()?;
    m.add_class::<Vtree>()?;
    m.add_function(wrap_pyfunction!(restructure, m)?)?;
    m.add_function(wrap_pyfunction!(depth_reduce, m)?)?;
    m.add_function(wrap_pyfunction!(multiply, m)?)?;
    m.add_function(wrap_pyfunction!(compile_pcfg, m)?)?;
    m.add_function(wrap_pyfunction!(check_equivalence, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
