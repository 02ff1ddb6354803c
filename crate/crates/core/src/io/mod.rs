//! File formats: PFM disparities, PGM/PNG images and the JSON report.

mod image;
mod pfm;
mod report;

pub use self::image::{read_image, write_png, write_png_rgb8, ImageFormat};
pub use self::pfm::{decode_pfm, read_pfm, write_pfm, PfmHeader, PfmImage};
pub use self::report::{parse_report, round_significant, write_report};
