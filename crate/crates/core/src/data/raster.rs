//! Even-odd polygon rasterization at pixel centres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One polygon in pixel coordinates (x right, y down). The first ring is the
/// outer boundary, later rings are holes. Rings may be given open or closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub rings: Vec<Vec<[f64; 2]>>,
}

impl Polygon {
    pub fn new(rings: Vec<Vec<[f64; 2]>>) -> Self {
        Polygon { rings }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon::new(vec![vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]])
    }

    /// Rings with the closing vertex dropped, checked for degeneracy.
    fn open_rings(&self, index: usize) -> Result<Vec<&[[f64; 2]]>> {
        self.rings
            .iter()
            .enumerate()
            .map(|(r, ring)| {
                let open = match (ring.first(), ring.last()) {
                    (Some(a), Some(b)) if ring.len() > 1 && a == b => &ring[..ring.len() - 1],
                    _ => &ring[..],
                };
                let mut distinct: Vec<[f64; 2]> = Vec::new();
                for v in open {
                    if !v[0].is_finite() || !v[1].is_finite() {
                        return Err(Error::DegenerateRing { polygon: index, ring: r });
                    }
                    if !distinct.contains(v) {
                        distinct.push(*v);
                        if distinct.len() >= 3 {
                            break;
                        }
                    }
                }
                if distinct.len() < 3 {
                    return Err(Error::DegenerateRing { polygon: index, ring: r });
                }
                Ok(open)
            })
            .collect()
    }
}

/// Validate every ring of every polygon.
pub fn validate_polygons(polygons: &[Polygon]) -> Result<()> {
    for (i, p) in polygons.iter().enumerate() {
        p.open_rings(i)?;
    }
    Ok(())
}

/// Binary mask `[1, height, width]`: pixel `(x, y)` is 1 iff its centre
/// `(x + 0.5, y + 0.5)` lies inside some polygon under the even-odd rule.
pub fn rasterize(polygons: &[Polygon], width: usize, height: usize) -> Result<Tensor<f32>> {
    let mut mask = Tensor::zeros(vec![1, height, width])?;
    let data = mask.data_mut();
    let mut crossings: Vec<f64> = Vec::new();
    for (index, polygon) in polygons.iter().enumerate() {
        let rings = polygon.open_rings(index)?;
        for y in 0..height {
            let py = y as f64 + 0.5;
            crossings.clear();
            for ring in &rings {
                let n = ring.len();
                for i in 0..n {
                    let [xi, yi] = ring[i];
                    let [xj, yj] = ring[(i + n - 1) % n];
                    if (yi > py) != (yj > py) {
                        crossings.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                    }
                }
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            // number of crossings strictly right of the centre, via a moving cursor
            let mut k = 0;
            let row = &mut data[y * width..(y + 1) * width];
            for (x, px) in row.iter_mut().enumerate() {
                let cx = x as f64 + 0.5;
                while k < crossings.len() && crossings[k] <= cx {
                    k += 1;
                }
                if (crossings.len() - k) % 2 == 1 {
                    *px = 1.0;
                }
            }
        }
    }
    Ok(mask)
}

/// Ray-casting point-in-polygon test over all rings of one polygon.
pub fn point_in_polygon(polygon: &Polygon, px: f64, py: f64) -> bool {
    let mut inside = false;
    for ring in &polygon.rings {
        let n = ring.len();
        let mut j = n.wrapping_sub(1);
        for i in 0..n {
            let [xi, yi] = ring[i];
            let [xj, yj] = ring[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}
