use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::LocError;

/// Rectangular stage, origin at one corner, x across `width`, y across `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub width: f64,
    pub depth: f64,
}

impl Default for Venue {
    fn default() -> Self {
        Self {
            width: 6.0,
            depth: 12.0,
        }
    }
}

impl Venue {
    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.depth
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * self.width, 0.5 * self.depth)
    }

    pub fn clamp(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.depth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: u16,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Anchor {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConstellation {
    pub venue: Venue,
    pub anchors: Vec<Anchor>,
}

impl AnchorConstellation {
    /// Eight anchors around a 6 m × 12 m stage: the four corners and the
    /// middle of each long side, alternating between low and high mounts.
    pub fn default_venue() -> Self {
        let venue = Venue::default();
        let (w, d) = (venue.width, venue.depth);
        let spots = [
            (0.0, 0.0, 0.3),
            (w, 0.0, 2.6),
            (w, 0.5 * d, 0.3),
            (w, d, 2.6),
            (0.0, d, 0.3),
            (0.0, 0.5 * d, 2.6),
            (0.5 * w, 0.0, 2.0),
            (0.5 * w, d, 2.0),
        ];
        let anchors = spots
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| Anchor {
                id: i as u16,
                x,
                y,
                z,
            })
            .collect();
        Self { venue, anchors }
    }

    pub fn get(&self, id: u16) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn position(&self, id: u16) -> Result<Vector3<f64>, LocError> {
        self.get(id)
            .map(Anchor::position)
            .ok_or(LocError::UnknownAnchor(id))
    }

    /// The ring of consecutive anchor pairs used for TDOA measurements.
    pub fn ring_pairs(&self) -> Vec<(u16, u16)> {
        let n = self.anchors.len();
        (0..n)
            .map(|i| (self.anchors[i].id, self.anchors[(i + 1) % n].id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), LocError> {
        if self.anchors.len() < 4 {
            return Err(LocError::InvalidInput("at least 4 anchors are required"));
        }
        let mut ids: Vec<u16> = self.anchors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.anchors.len() {
            return Err(LocError::InvalidInput("anchor ids must be unique"));
        }
        let p0 = Vector2::new(self.anchors[0].x, self.anchors[0].y);
        let dir = self
            .anchors
            .iter()
            .map(|a| Vector2::new(a.x, a.y) - p0)
            .find(|v| v.norm() > 1e-9);
        let collinear = match dir {
            None => true,
            Some(u) => self.anchors.iter().all(|a| {
                let v = Vector2::new(a.x, a.y) - p0;
                (u.x * v.y - u.y * v.x).abs() < 1e-9 * u.norm().max(1.0)
            }),
        };
        if collinear {
            return Err(LocError::InvalidInput("anchors are collinear"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocError> {
        let text = std::fs::read_to_string(path).map_err(|e| LocError::Io(e.to_string()))?;
        let c: Self = toml::from_str(&text).map_err(|e| LocError::Format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("constellations always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let c = AnchorConstellation::default_venue();
        assert_eq!(c.anchors.len(), 8);
        c.validate().unwrap();
        assert_eq!(c.ring_pairs().len(), 8);
        assert_eq!(c.ring_pairs()[7], (7, 0));
    }

    #[test]
    fn collinear_and_small_rejected() {
        let mut c = AnchorConstellation::default_venue();
        for (i, a) in c.anchors.iter_mut().enumerate() {
            a.x = 0.0;
            a.y = i as f64;
        }
        assert!(c.validate().is_err());
        c.anchors.truncate(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let c = AnchorConstellation::default_venue();
        let text = c.to_toml_string();
        assert!(text.contains("[[anchors]]"));
        let back: AnchorConstellation = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
