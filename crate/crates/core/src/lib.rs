pub mod basis;
pub mod bounds;
pub mod mesh;
pub mod validity;
pub mod tmop;
pub mod tangential;
pub mod solver;
pub mod fixtures;
pub mod cli;
