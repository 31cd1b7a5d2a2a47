//! Quantitative algebraic effects with exact arithmetic.
//!
//! The crate evaluates quantitative equational theories built from barycentric,
//! semilattice, exception, reader, writer and contractive-operator atoms,
//! combined by sum and tensor. Terms are interpreted in the concrete
//! description of the free monad of their theory, where the distance between
//! two terms becomes a nested Kantorovich / Hausdorff / supremum computation.
//! The same machinery solves discounted bisimilarity metrics of Markov
//! processes, labelled Markov processes, Mealy machines and MDPs, and checks
//! finite algebras against theory axioms.
//!
//! Everything is generic over an exact [`Scalar`]; the aliases at the crate
//! root fix it to arbitrary-precision rationals.

pub mod bisim;
pub mod ext;
pub mod modelcheck;
pub mod scalar;
pub mod semantics;
pub mod sigterm;
pub mod spaces;
pub mod syntax;
pub mod theory;

pub use ext::{ArithError, ExtValue as GenericExtValue};
pub use scalar::Scalar;

/// Arbitrary-precision rationals, the default scalar.
pub type Rational = num_rational::BigRational;

pub type ExtValue = ext::ExtValue<Rational>;
pub type FinMetricSpace = spaces::FinMetricSpace<Rational>;
pub type FinDist = spaces::FinDist<Rational>;
pub type MonoidElem = sigterm::MonoidElem<Rational>;
pub type OpSym = sigterm::OpSym<Rational>;
pub type Term = sigterm::Term<Rational>;
pub type Monoid = theory::Monoid<Rational>;
pub type FiniteMonoid = theory::FiniteMonoid<Rational>;
pub type TheoryExpr = theory::TheoryExpr<Rational>;
pub type AxiomInstance = theory::AxiomInstance<Rational>;
pub type ParamPool = theory::ParamPool<Rational>;
pub type LayerPlan = theory::LayerPlan<Rational>;
pub type SemValue = semantics::SemValue<Rational>;
pub type Coalgebra = bisim::Coalgebra<Rational>;
pub type PseudoMetric = bisim::PseudoMetric<Rational>;
pub type Certificate = bisim::Certificate<Rational>;
pub type FiniteAlgebra = modelcheck::FiniteAlgebra<Rational>;
pub type Report = modelcheck::Report<Rational>;
pub type Env = syntax::Env<Rational>;

pub use semantics::Mode;
