pub mod active;
pub mod autodiff;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod posterior;
pub mod rngs;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod uq;

/// Double-precision instances of the scalar-generic types.
pub type Mat3 = numeric::mat3::Mat3<f64>;
pub type Feature = tensor::EquivariantFeature<f64>;
pub type Forward = model::ForwardOutput<f64>;
pub type Prediction = losses::StructurePrediction<f64>;

/// Taped instances, for gradients.
pub type VarFeature = tensor::EquivariantFeature<autodiff::Var>;
pub type VarForward = model::ForwardOutput<autodiff::Var>;
pub type VarPrediction = losses::StructurePrediction<autodiff::Var>;
