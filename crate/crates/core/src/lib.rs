pub mod numkit;
pub mod net;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod screener;
