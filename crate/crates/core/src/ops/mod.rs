pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
