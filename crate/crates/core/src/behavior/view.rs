use std::collections::BTreeMap;

use nalgebra::Vector2;

/// Neighbor data older than this (s) is dropped from the view.
pub const STALENESS_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: u16,
    /// From self to the neighbor (m).
    pub rel_pos: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub phase: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marker {
    pub position: Vector2<f64>,
}

/// What one robot knows about the others at a given instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborView {
    pub neighbors: Vec<Neighbor>,
    pub marker: Option<Marker>,
    /// Every peer id ever heard from, fresh or stale. Pursuit ordering is
    /// defined over this roster so a silent target is not silently replaced.
    pub roster: Vec<u16>,
}

impl NeighborView {
    pub fn get(&self, id: u16) -> Option<&Neighbor> {
        self.neighbors.iter().find(|n| n.id == id)
    }

    pub fn centroid(&self) -> Option<Vector2<f64>> {
        if self.neighbors.is_empty() {
            return None;
        }
        let sum = self
            .neighbors
            .iter()
            .fold(Vector2::zeros(), |acc, n| acc + n.rel_pos);
        Some(sum / self.neighbors.len() as f64)
    }
}

/// Last gossip heard from one peer, in absolute coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerRecord {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub phase: u8,
    pub heard_at: f64,
}

/// Per-robot cache of decoded gossip, from which views are built.
#[derive(Debug, Clone, Default)]
pub struct NeighborTable {
    peers: BTreeMap<u16, PeerRecord>,
    marker: Option<(Vector2<f64>, f64)>,
}

impl NeighborTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_peer(&mut self, id: u16, rec: PeerRecord) {
        self.peers.insert(id, rec);
    }

    pub fn record_marker(&mut self, position: Vector2<f64>, heard_at: f64) {
        self.marker = Some((position, heard_at));
    }

    pub fn forget(&mut self, id: u16) {
        self.peers.remove(&id);
    }

    pub fn clear(&mut self) {
        self.peers.clear();
        self.marker = None;
    }

    pub fn peer(&self, id: u16) -> Option<&PeerRecord> {
        self.peers.get(&id)
    }

    /// Builds the view seen from `self_pos` at time `now`, dropping anything
    /// older than `staleness`. Own id is never included.
    pub fn view(&self, self_id: u16, self_pos: Vector2<f64>, now: f64, staleness: f64) -> NeighborView {
        let fresh = |t: f64| now - t <= staleness;
        let neighbors = self
            .peers
            .iter()
            .filter(|(id, rec)| **id != self_id && fresh(rec.heard_at))
            .map(|(id, rec)| Neighbor {
                id: *id,
                rel_pos: rec.position - self_pos,
                velocity: rec.velocity,
                phase: rec.phase,
            })
            .filter(|n| n.rel_pos.x.is_finite() && n.rel_pos.y.is_finite())
            .collect();
        let marker = self
            .marker
            .filter(|(_, t)| fresh(*t))
            .map(|(p, _)| Marker { position: p });
        NeighborView {
            neighbors,
            marker,
            roster: self.peers.keys().copied().filter(|id| *id != self_id).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, t: f64) -> PeerRecord {
        PeerRecord {
            position: Vector2::new(x, 0.0),
            velocity: Vector2::zeros(),
            phase: 0,
            heard_at: t,
        }
    }

    #[test]
    fn stale_peers_leave_view_but_stay_in_roster() {
        let mut t = NeighborTable::new();
        t.record_peer(1, rec(1.0, 0.0));
        t.record_peer(2, rec(2.0, 0.9));
        t.record_peer(3, rec(3.0, 1.0));
        let v = t.view(3, Vector2::new(3.0, 0.0), 1.5, STALENESS_WINDOW);
        assert_eq!(v.neighbors.len(), 1);
        assert_eq!(v.neighbors[0].id, 2);
        assert_eq!(v.neighbors[0].rel_pos, Vector2::new(-1.0, 0.0));
        assert_eq!(v.roster, vec![1, 2]);
    }

    #[test]
    fn marker_goes_stale() {
        let mut t = NeighborTable::new();
        t.record_marker(Vector2::new(1.0, 1.0), 0.0);
        assert!(t.view(0, Vector2::zeros(), 0.5, 1.0).marker.is_some());
        assert!(t.view(0, Vector2::zeros(), 1.5, 1.0).marker.is_none());
    }
}
