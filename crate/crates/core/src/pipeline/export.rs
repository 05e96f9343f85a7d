//! CSV export of localizations and tracks.

use std::collections::HashMap;
use std::io::Write;

use super::localize::LocalizationEvent;
use super::track::{Track, TrackPoint};
use crate::geometry::Point;
use crate::{Error, Result};

pub const LOCALIZATION_HEADER: &str = "frame,t_s,axial_mm,lateral_mm,score,amplitude,track_id";
pub const TRACK_HEADER: &str = "track_id,frame,t_s,axial_mm,lateral_mm,vz_mm_s,vx_mm_s";

/// One row per event; `track_id` is blank for events outside every track.
pub fn write_localizations(out: &mut impl Write, events: &[Vec<LocalizationEvent>], tracks: &[Track]) -> Result<()> {
    let owner: HashMap<(usize, usize), usize> = tracks
        .iter()
        .flat_map(|t| t.points.iter().map(move |p| ((p.frame, p.event), t.id)))
        .collect();
    let mut buf = String::with_capacity(1 << 16);
    buf.push_str(LOCALIZATION_HEADER);
    buf.push('\n');
    for frame in events {
        for (k, e) in frame.iter().enumerate() {
            let id = owner.get(&(e.frame, k)).map_or(String::new(), |id| id.to_string());
            buf.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                e.frame, e.t, e.position.z, e.position.x, e.score, e.amplitude, id
            ));
        }
        if buf.len() > 1 << 20 {
            out.write_all(buf.as_bytes()).map_err(|e| Error::io("localizations", e))?;
            buf.clear();
        }
    }
    out.write_all(buf.as_bytes()).map_err(|e| Error::io("localizations", e))
}

pub fn write_tracks(out: &mut impl Write, tracks: &[Track]) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(TRACK_HEADER);
    buf.push('\n');
    for t in tracks {
        for p in &t.points {
            buf.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.4},{:.4}\n",
                t.id, p.frame, p.t, p.position.z, p.position.x, p.velocity.z, p.velocity.x
            ));
        }
    }
    out.write_all(buf.as_bytes()).map_err(|e| Error::io("tracks", e))
}

/// Parses the output of [`write_tracks`]. Event indices are not stored and
/// come back as 0; velocities keep the written precision.
pub fn read_tracks(text: &str) -> Result<Vec<Track>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACK_HEADER => {}
        _ => return Err(Error::Format(format!("track file must start with `{TRACK_HEADER}`"))),
    }
    let mut tracks: Vec<Track> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("track file line {}: cannot parse `{line}`", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
        let id = f[0].trim().parse::<usize>().map_err(|_| bad())?;
        let point = TrackPoint {
            frame: f[1].trim().parse::<usize>().map_err(|_| bad())?,
            event: 0,
            t: num(2)?,
            position: Point::new(num(3)?, num(4)?),
            velocity: Point::new(num(5)?, num(6)?),
        };
        match tracks.last_mut() {
            Some(t) if t.id == id => t.points.push(point),
            _ => tracks.push(Track {
                id,
                points: vec![point],
            }),
        }
    }
    Ok(tracks)
}
