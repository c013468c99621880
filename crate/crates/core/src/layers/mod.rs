//! Graph-layer primitives with exact reverse-mode products.

mod affine;
mod field;
mod gat;
mod gcgru;
mod gcn;
mod gmde;
mod params;
mod tcn;

pub use affine::{affine_forward, AffineCache, AffineSpec, AffineStack};
pub use field::{
    field_vjp, field_vjp_into, stacked_field_eval, FieldSpec, GraphBinding, GraphField, LayerSpec, TimeDependence,
};
pub use gat::{gat_forward, GatCache, GatLayerSpec};
pub use gcgru::{gcgru_jump, GcgruCache, GcgruParams};
pub use gcn::{gcn_forward, GcnCache, GcnLayerSpec};
pub use gmde::{gmde_field, GmdeCache, GmdeSpec};
pub use params::{ParamStore, View};
pub use tcn::{TemporalConvCache, TemporalConvSpec};

/// View name for a depth slab; autonomous fields use the bare name.
pub(crate) fn slab_name(name: &str, slab: Option<usize>) -> String {
    match slab {
        None => name.to_string(),
        Some(c) => format!("{name}@{c}"),
    }
}
