pub mod aggregate;
pub mod calibrate;
pub mod cv;
pub mod design;
pub mod fit;
pub mod fuse;
pub mod pairs_query;
pub mod predict_grid;
pub mod top_regions;
