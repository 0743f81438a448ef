pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod textprep;
pub mod training;
