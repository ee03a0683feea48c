//! Volumetric primitives posed in world space, BVH ray queries and
//! differentiable front-to-back raymarching with saturating transmittance.

pub mod bvh;
pub mod camera;
pub mod image_io;
pub mod primitive;
pub mod raymarch;

pub use bvh::{slab_intervals_exhaustive, Aabb, Bvh, HitInterval};
pub use camera::{read_rig, write_rig, Camera, Ray};
pub use image_io::{
    read_pfm_color, read_pfm_gray, read_pgm, read_ppm, write_pfm_color, write_pfm_gray, write_pgm,
    write_ppm, GrayImage, RgbImage,
};
pub use primitive::{primitive_pose, Primitive, PrimitiveSet, VolrenError};
pub use raymarch::{march_pixel, render, render_backward, PixelSample, RenderGrads, RenderOutput};
