pub mod annotation;
pub mod domspec;
pub mod embedder;
pub mod literal;
pub mod mapping;
pub mod pipeline;
pub mod repository;
pub mod source;
pub mod stub;
pub mod validator;
pub mod vocabulary;
pub mod xmlpath;

#[cfg(test)]
pub(crate) mod testutil;
