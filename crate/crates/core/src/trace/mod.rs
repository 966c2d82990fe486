//! From the dewarped signal channel to calibrated lead series: connected
//! components, snipping of merged strokes, chaining by minimum-cost matching,
//! per-column reduction and conversion to millivolts.

mod assign;
mod chain;
mod components;
mod extract;

pub use assign::{assignment_cost, brute_force_assignment, linear_sum_assignment};
pub use chain::{chain_components, link_cost, merge_components, Chain, BACKWARD_FACTOR, W_X, W_Y};
pub use components::{
    connected_components, flag_problematic, is_problematic, iterate_components, median_thickness, separating_path, snip, thickness_quantile,
    Component, Iterated, MAX_ITERATIONS, MIN_COMPONENT_PIXELS, TRACE_THRESHOLD,
};
pub use extract::{
    edge_bounds, envelope_centre, extract_trace, fit_pen_radius, fit_row_anchors, lead_traces, to_physical, ColumnSums, DigitizedECG, DigitizedLead, LeadTrace,
    NanCause, MAX_BRIDGED_SAMPLES,
};

use crate::error::Result;
use crate::grid_scale::GridSpacing;
use crate::layout::LayoutSpec;
use crate::raster::Plane;

/// Longest link between fragments, in millimetres of paper.
pub const MAX_LINK_MM: f64 = 5.0;

/// Everything the tracer found on one page.
#[derive(Clone, Debug)]
pub struct TraceResult {
    pub components: Vec<Component>,
    pub chains: Vec<Chain>,
    pub row_anchors: Vec<f64>,
    pub iterations: usize,
    pub traces: Vec<LeadTrace>,
}

/// Runs the tracer over a dewarped signal channel laid out as `layout`.
pub fn trace_signal(
    signal: &Plane<'_>,
    layout: &LayoutSpec,
    spacing: &GridSpacing,
    paper_speed: f64,
    threshold: f32,
) -> Result<TraceResult> {
    let it = iterate_components(signal, threshold, layout.n_rows())?;
    let pitch = layout.row_pitch_mm * spacing.d_y;
    let anchors = fit_row_anchors(&it.components, signal.height, layout.n_rows(), pitch)?;
    let chains = merge_components(&it.components, &anchors, MAX_LINK_MM * spacing.d_x)?;
    // Flat stretches, the thinnest columns, show the pen width.
    let stroke = thickness_quantile(&it.components, 0.2);
    let traces = lead_traces(
        &it.components,
        &chains,
        layout,
        signal.width,
        signal.height,
        paper_speed * spacing.d_x,
        stroke,
    )?;
    Ok(TraceResult {
        components: it.components,
        chains,
        row_anchors: anchors,
        iterations: it.iterations,
        traces,
    })
}
