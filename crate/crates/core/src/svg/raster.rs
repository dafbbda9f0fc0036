use std::io::Cursor;

use resvg::tiny_skia::{Pixmap, Transform};
use resvg::usvg;

use super::{serialize_element, ElementNode, Node, NodePath, SvgDocument, SvgError};

/// Canvas edge used for every visual comparison.
pub const DEFAULT_RASTER_SIZE: u32 = 256;

/// Largest RMSE (0-255 scale, 256x256 RGBA) still considered "visually unchanged".
pub const VISUAL_TOLERANCE: f64 = 2.0;

const SVG_NS: &str = "http://www.w3.org/2000/svg";
const XLINK_NS: &str = "http://www.w3.org/1999/xlink";

/// Elements the renderer cannot reproduce faithfully.
const UNSUPPORTED_TAGS: &[&str] = &[
    "script",
    "foreignObject",
    "animate",
    "animateMotion",
    "animateTransform",
    "animateColor",
    "set",
    "iframe",
    "video",
    "audio",
];

/// Straight (non-premultiplied) RGBA pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, SvgError> {
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(SvgError::BadPixelBuffer {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Fully transparent image.
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width as usize * height as usize * 4],
        }
    }

    /// Image filled with a single RGBA colour.
    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        let pixels = rgba
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 4)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }

    /// Lossless PNG encoding; deterministic for a given image.
    pub fn to_png(&self) -> Result<Vec<u8>, SvgError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgba);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| SvgError::Png(e.to_string()))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| SvgError::Png(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes an 8-bit RGBA PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Self, SvgError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder
            .read_info()
            .map_err(|e| SvgError::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| SvgError::Png(e.to_string()))?;
        buf.truncate(info.buffer_size());
        if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
            return Err(SvgError::Png(format!(
                "expected 8-bit RGBA, got {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        Self::new(info.width, info.height, buf)
    }
}

fn check_supported(doc: &SvgDocument) -> Result<(), SvgError> {
    for node in doc.descendants() {
        if UNSUPPORTED_TAGS.contains(&node.local_name()) {
            return Err(SvgError::RenderUnsupported {
                path: node.node_path.clone(),
                tag: node.tag.clone(),
                reason: "element is not rendered".into(),
            });
        }
    }
    Ok(())
}

/// Serialized form handed to the renderer, with the namespace declarations
/// it needs added when the source omitted them.
fn render_source(doc: &SvgDocument) -> String {
    let mut root = doc.root.clone();
    let xmlns_attr = match root.tag.split_once(':') {
        Some((prefix, _)) => format!("xmlns:{prefix}"),
        None => "xmlns".to_string(),
    };
    if !root.attributes.contains(&xmlns_attr) {
        root.attributes.set(xmlns_attr, SVG_NS);
    }
    let uses_xlink = doc
        .descendants()
        .iter()
        .any(|n| n.attributes.keys().any(|k| k.starts_with("xlink:")));
    if uses_xlink && !root.attributes.contains("xmlns:xlink") {
        root.attributes.set("xmlns:xlink", XLINK_NS);
    }
    serialize_element(&root)
}

fn render_options() -> usvg::Options<'static> {
    let mut opt = usvg::Options::default();
    // Only embedded data URLs are resolved; no filesystem access.
    opt.image_href_resolver.resolve_string = Box::new(|_, _| None);
    opt
}

/// Renders the document onto a transparent `width x height` canvas, scaled
/// uniformly to fit and centred.
pub fn rasterize(doc: &SvgDocument, width: u32, height: u32) -> Result<RasterImage, SvgError> {
    if width == 0 || height == 0 {
        return Err(SvgError::InvalidDimensions(width, height));
    }
    check_supported(doc)?;
    let source = render_source(doc);
    let tree = usvg::Tree::from_str(&source, &render_options()).map_err(|e| {
        SvgError::RenderUnsupported {
            path: NodePath::root(),
            tag: doc.root.tag.clone(),
            reason: e.to_string(),
        }
    })?;

    let mut pixmap =
        Pixmap::new(width, height).ok_or(SvgError::InvalidDimensions(width, height))?;
    let size = tree.size();
    let (sw, sh) = (size.width() as f64, size.height() as f64);
    let scale = (width as f64 / sw).min(height as f64 / sh);
    let tx = (width as f64 - sw * scale) / 2.0;
    let ty = (height as f64 - sh * scale) / 2.0;
    let transform = Transform::from_row(scale as f32, 0.0, 0.0, scale as f32, tx as f32, ty as f32);
    resvg::render(&tree, transform, &mut pixmap.as_mut());

    let mut pixels = Vec::with_capacity(width as usize * height as usize * 4);
    for px in pixmap.pixels() {
        let c = px.demultiply();
        pixels.extend_from_slice(&[c.red(), c.green(), c.blue(), c.alpha()]);
    }
    RasterImage::new(width, height, pixels)
}

/// [`rasterize`] at the default 256x256 canvas.
pub fn rasterize_default(doc: &SvgDocument) -> Result<RasterImage, SvgError> {
    rasterize(doc, DEFAULT_RASTER_SIZE, DEFAULT_RASTER_SIZE)
}

/// Copy of `doc` without the elements [`rasterize`] refuses to render.
pub fn strip_unsupported(doc: &SvgDocument) -> SvgDocument {
    fn strip(node: &mut ElementNode) {
        node.children.retain(|c| match c {
            Node::Element(e) => !UNSUPPORTED_TAGS.contains(&e.local_name()),
            Node::Text(_) => true,
        });
        for child in node.elements_mut() {
            strip(child);
        }
    }
    let mut out = doc.clone();
    strip(&mut out.root);
    out.refresh();
    out
}

/// Like [`rasterize`], but renders around unsupported elements instead of
/// refusing the whole document.
pub fn rasterize_lenient(
    doc: &SvgDocument,
    width: u32,
    height: u32,
) -> Result<RasterImage, SvgError> {
    match rasterize(doc, width, height) {
        Err(SvgError::RenderUnsupported { path, .. }) if !path.is_root() => {
            rasterize(&strip_unsupported(doc), width, height)
        }
        other => other,
    }
}

/// Root-mean-square error over every channel of every pixel, 0-255 scale.
pub fn visual_distance(a: &RasterImage, b: &RasterImage) -> Result<f64, SvgError> {
    if a.width != b.width || a.height != b.height {
        return Err(SvgError::DimensionMismatch {
            left: (a.width, a.height),
            right: (b.width, b.height),
        });
    }
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok((sum as f64 / a.pixels.len() as f64).sqrt())
}
