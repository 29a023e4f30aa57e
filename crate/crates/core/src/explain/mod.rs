//! Grad-CAM heatmaps per pathway, external saliency maps, overlap
//! statistics and overlay rendering.

mod cam;
mod compare;
mod overlay;
mod saliency;

pub use cam::{grad_cam, HeatmapStack};
pub use compare::{compare_maps, pearson, spatial_entropy, top_fraction_iou, OverlapReport};
pub use overlay::{colormap, render_overlay};
pub use saliency::{gaussian_gaze, load_saliency, resample, save_grid, save_saliency_png, SaliencyMap};
