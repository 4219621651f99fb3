//! Test support, behind the `testkit` feature: bundled fixtures, reference
//! implementations that answer the same questions as the production
//! analyses by brute force, random model generators and a fault-injection
//! driver.

pub mod fixtures;
pub mod fuzz;
pub mod gen;
pub mod oracle;
