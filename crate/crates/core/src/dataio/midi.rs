//! Standard MIDI File reading and writing.
//!
//! Only what transcription needs is interpreted: note on/off, tempo and
//! end-of-track. Everything else is skipped with correct length handling.

use std::collections::HashMap;
use std::path::Path;

use super::{NoteEvent, NoteSequence, MAX_PITCH, MIN_PITCH};
use crate::error::{Error, Result};

const DEFAULT_TEMPO_US: u32 = 500_000;
/// Ticks per quarter note used when writing. At 120 bpm one tick is 0.5 ms.
pub const WRITE_PPQ: u16 = 1000;

/// Counters for conditions that were tolerated while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MidiReport {
    pub dropped_out_of_range: usize,
    pub dangling_closed: usize,
    pub zero_length_dropped: usize,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::MidiParse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!("need {n} bytes, file truncated")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::MidiParse {
            offset: start,
            message: "variable-length quantity longer than 4 bytes".into(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Tempo(u32),
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    EndOfTrack,
}

#[derive(Debug, Clone, Copy)]
struct TimedEvent {
    tick: u64,
    track: usize,
    seq: usize,
    kind: Kind,
}

enum Timing {
    Metrical(u16),
    /// Seconds per tick for SMPTE divisions.
    Smpte(f64),
}

fn parse_track(r: &mut Reader<'_>, end: usize, track: usize, out: &mut Vec<TimedEvent>) -> Result<()> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut saw_end = false;
    while r.pos < end {
        tick += r.vlq()? as u64;
        let status_pos = r.pos;
        let mut status = r.u8()?;
        let mut first_data = None;
        if status < 0x80 {
            let rs = running.ok_or(Error::MidiParse {
                offset: status_pos,
                message: "data byte without running status".into(),
            })?;
            first_data = Some(status);
            status = rs;
        }
        let mut push = |kind| {
            out.push(TimedEvent {
                tick,
                track,
                seq: out.len(),
                kind,
            })
        };
        match status {
            0xff => {
                let meta = r.u8()?;
                let len = r.vlq()? as usize;
                let body = r.bytes(len)?;
                match meta {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        push(Kind::Tempo(us));
                    }
                    0x2f => {
                        push(Kind::EndOfTrack);
                        saw_end = true;
                        break;
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                let len = r.vlq()? as usize;
                r.bytes(len)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let mut data = |r: &mut Reader<'_>| -> Result<u8> {
                    let b = match first_data.take() {
                        Some(b) => b,
                        None => r.u8()?,
                    };
                    if b >= 0x80 {
                        return Err(Error::MidiParse {
                            offset: r.pos - 1,
                            message: format!("status byte {b:#04x} where data expected"),
                        });
                    }
                    Ok(b)
                };
                match status & 0xf0 {
                    0x80 => {
                        let pitch = data(r)?;
                        data(r)?;
                        push(Kind::NoteOff { pitch });
                    }
                    0x90 => {
                        let pitch = data(r)?;
                        let velocity = data(r)?;
                        if velocity == 0 {
                            push(Kind::NoteOff { pitch });
                        } else {
                            push(Kind::NoteOn { pitch, velocity });
                        }
                    }
                    0xc0 | 0xd0 => {
                        data(r)?;
                    }
                    _ => {
                        data(r)?;
                        data(r)?;
                    }
                }
            }
            _ => {
                return Err(Error::MidiParse {
                    offset: status_pos,
                    message: format!("unsupported status byte {status:#04x}"),
                })
            }
        }
    }
    if !saw_end {
        // Tolerate a missing end-of-track marker.
        out.push(TimedEvent {
            tick,
            track,
            seq: out.len(),
            kind: Kind::EndOfTrack,
        });
    }
    r.pos = end;
    Ok(())
}

/// Parse an in-memory Standard MIDI File (format 0 or 1).
pub fn parse_midi_bytes(data: &[u8]) -> Result<(NoteSequence, MidiReport)> {
    let mut r = Reader { data, pos: 0 };
    if r.bytes(4)? != b"MThd" {
        return Err(Error::MidiParse {
            offset: 0,
            message: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    let header_start = r.pos;
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    if format > 1 {
        return Err(Error::MidiParse {
            offset: header_start,
            message: format!("unsupported SMF format {format}"),
        });
    }
    r.pos = header_start + header_len.max(6);
    let timing = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as i8) as f64;
        let sub = (division & 0xff) as f64;
        if fps <= 0.0 || sub <= 0.0 {
            return Err(Error::MidiParse {
                offset: header_start + 4,
                message: "invalid SMPTE division".into(),
            });
        }
        Timing::Smpte(1.0 / (fps * sub))
    } else {
        if division == 0 {
            return Err(Error::MidiParse {
                offset: header_start + 4,
                message: "zero ticks per quarter note".into(),
            });
        }
        Timing::Metrical(division)
    };

    let mut events = Vec::new();
    let mut track = 0;
    while r.pos < data.len() && track < n_tracks as usize {
        let chunk_start = r.pos;
        let id = r.bytes(4)?;
        let len = r.u32()? as usize;
        let end = r.pos + len;
        if end > data.len() {
            return Err(Error::MidiParse {
                offset: chunk_start,
                message: format!("chunk of {len} bytes runs past end of file"),
            });
        }
        if id == b"MTrk" {
            parse_track(&mut r, end, track, &mut events)?;
            track += 1;
        } else {
            r.pos = end;
        }
    }

    events.sort_by_key(|e| (e.tick, e.seq));

    // Tempo map: ticks to seconds, applied globally across tracks.
    let mut seconds = Vec::with_capacity(events.len());
    let (mut last_tick, mut last_sec, mut tempo) = (0u64, 0.0f64, DEFAULT_TEMPO_US);
    for e in &events {
        let dt = (e.tick - last_tick) as f64;
        last_sec += match timing {
            Timing::Metrical(ppq) => dt * tempo as f64 * 1e-6 / ppq as f64,
            Timing::Smpte(spt) => dt * spt,
        };
        last_tick = e.tick;
        seconds.push(last_sec);
        if let Kind::Tempo(us) = e.kind {
            tempo = us.max(1);
        }
    }

    let mut report = MidiReport::default();
    let mut open: HashMap<u8, (f64, u8, usize)> = HashMap::new();
    let mut notes = Vec::new();
    let mut close = |pitch: u8, onset: f64, velocity: u8, at: f64, report: &mut MidiReport| {
        if !(MIN_PITCH..=MAX_PITCH).contains(&pitch) {
            report.dropped_out_of_range += 1;
        } else if at <= onset {
            report.zero_length_dropped += 1;
        } else {
            notes.push(NoteEvent {
                pitch,
                onset,
                offset: at,
                velocity,
            });
        }
    };
    let mut end_time: f64 = 0.0;
    for (e, &t) in events.iter().zip(&seconds) {
        end_time = end_time.max(t);
        match e.kind {
            Kind::NoteOn { pitch, velocity } => {
                // Re-onset of a sounding pitch closes the previous note.
                if let Some((on, vel, _)) = open.insert(pitch, (t, velocity, e.track)) {
                    close(pitch, on, vel, t, &mut report);
                }
            }
            Kind::NoteOff { pitch } => {
                if let Some((on, vel, _)) = open.remove(&pitch) {
                    close(pitch, on, vel, t, &mut report);
                }
            }
            Kind::EndOfTrack => {
                let dangling: Vec<u8> = open
                    .iter()
                    .filter(|(_, v)| v.2 == e.track)
                    .map(|(&p, _)| p)
                    .collect();
                for pitch in dangling {
                    let (on, vel, _) = open.remove(&pitch).unwrap();
                    log::warn!("note {pitch} never released; closing at end of track");
                    report.dangling_closed += 1;
                    close(pitch, on, vel, t, &mut report);
                }
            }
            Kind::Tempo(_) => {}
        }
    }
    let mut leftover: Vec<_> = open.into_iter().collect();
    leftover.sort_by_key(|(p, _)| *p);
    for (pitch, (on, vel, _)) in leftover {
        report.dangling_closed += 1;
        close(pitch, on, vel, end_time, &mut report);
    }
    if report.dropped_out_of_range > 0 {
        log::warn!(
            "dropped {} notes outside the piano range",
            report.dropped_out_of_range
        );
    }
    Ok((NoteSequence::new(notes, end_time), report))
}

pub fn parse_notes_with_report(path: impl AsRef<Path>) -> Result<(NoteSequence, MidiReport)> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_midi_bytes(&data)
}

/// Read a Standard MIDI File into a sorted note sequence.
pub fn parse_notes(path: impl AsRef<Path>) -> Result<NoteSequence> {
    parse_notes_with_report(path).map(|(n, _)| n)
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = ((v & 0x7f) as u8) | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serialize notes as a format-0 file at 120 bpm with [`WRITE_PPQ`] ticks
/// per quarter note.
pub fn midi_bytes(notes: &NoteSequence) -> Vec<u8> {
    let ticks_per_second = WRITE_PPQ as f64 * 1e6 / DEFAULT_TEMPO_US as f64;
    let to_tick = |s: f64| (s * ticks_per_second).round().max(0.0) as u64;
    // (tick, order, bytes): offs sort before ons at the same tick.
    let mut evs: Vec<(u64, u8, [u8; 3])> = Vec::with_capacity(notes.len() * 2);
    for n in &notes.notes {
        let on = to_tick(n.onset);
        let off = to_tick(n.offset).max(on + 1);
        evs.push((on, 1, [0x90, n.pitch & 0x7f, n.velocity.clamp(1, 127)]));
        evs.push((off, 0, [0x80, n.pitch & 0x7f, 0]));
    }
    evs.sort_by_key(|e| (e.0, e.1));

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    let t = DEFAULT_TEMPO_US.to_be_bytes();
    track.extend_from_slice(&[0xff, 0x51, 0x03, t[1], t[2], t[3]]);
    let mut last = 0u64;
    for (tick, _, bytes) in evs {
        push_vlq(&mut track, (tick - last) as u32);
        track.extend_from_slice(&bytes);
        last = tick;
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_PPQ.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

pub fn write_midi(notes: &NoteSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, midi_bytes(notes)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Build a format-0 file at 480 ppq / 120 bpm from raw track events.
    fn smf(track_events: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xe0]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track_events.len() as u32).to_be_bytes());
        out.extend_from_slice(track_events);
        out
    }

    #[test]
    fn single_note_pair() {
        // 480 ticks = 0.5 s at 120 bpm
        let data = smf(&[0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00]);
        let (seq, report) = parse_midi_bytes(&data).unwrap();
        assert_eq!(seq.notes.len(), 1);
        let n = seq.notes[0];
        assert_eq!((n.pitch, n.onset, n.offset, n.velocity), (60, 0.0, 0.5, 100));
        assert_eq!(report, MidiReport::default());
    }

    #[test]
    fn empty_track() {
        let (seq, _) = parse_midi_bytes(&smf(&[0x00, 0xff, 0x2f, 0x00])).unwrap();
        assert!(seq.notes.is_empty());
    }

    #[test]
    fn same_pitch_reonset_splits_note() {
        // on@0, on@240 (running status), off@480: two notes 0-0.25, 0.25-0.5
        let data = smf(&[
            0x00, 0x90, 64, 90, 0x81, 0x70, 64, 80, 0x81, 0x70, 0x80, 64, 0, 0x00, 0xff, 0x2f, 0x00,
        ]);
        let (seq, _) = parse_midi_bytes(&data).unwrap();
        let got: Vec<_> = seq.notes.iter().map(|n| (n.onset, n.offset, n.velocity)).collect();
        assert_eq!(got, vec![(0.0, 0.25, 90), (0.25, 0.5, 80)]);
    }

    #[test]
    fn dangling_note_closes_at_end_of_track() {
        let data = smf(&[0x00, 0x90, 60, 100, 0x87, 0x40, 0xff, 0x2f, 0x00]);
        let (seq, report) = parse_midi_bytes(&data).unwrap();
        assert_eq!(report.dangling_closed, 1);
        assert_eq!(seq.notes[0].offset, 1.0);
    }

    #[test]
    fn out_of_range_pitches_are_counted() {
        let data = smf(&[
            0x00, 0x90, 10, 100, 0x10, 0x80, 10, 0, 0x00, 0x90, 60, 100, 0x10, 0x80, 60, 0, 0x00,
            0xff, 0x2f, 0x00,
        ]);
        let (seq, report) = parse_midi_bytes(&data).unwrap();
        assert_eq!(seq.notes.len(), 1);
        assert_eq!(report.dropped_out_of_range, 1);
    }

    #[test]
    fn tempo_change_is_applied() {
        // tempo 1 s per quarter, then one quarter-note note
        let data = smf(&[
            0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, 0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0,
            0x00, 0xff, 0x2f, 0x00,
        ]);
        let (seq, _) = parse_midi_bytes(&data).unwrap();
        assert!((seq.notes[0].offset - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_input_reports_offset() {
        match parse_midi_bytes(b"MThx") {
            Err(Error::MidiParse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        // truncated note-on: header is 14 bytes, track header 8, delta 1, status 1
        let mut data = smf(&[0x00, 0x90, 60]);
        data.truncate(data.len());
        match parse_midi_bytes(&data) {
            Err(Error::MidiParse { offset, .. }) => assert_eq!(offset, 25),
            other => panic!("{other:?}"),
        }
        match parse_midi_bytes(&smf(&[0x00, 0x40])) {
            Err(Error::MidiParse { offset, message }) => {
                assert_eq!(offset, 23);
                assert!(message.contains("running status"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn writer_round_trip() {
        let seq = NoteSequence::new(
            vec![
                NoteEvent::new(60, 0.0, 0.5),
                NoteEvent::new(60, 0.5, 0.75),
                NoteEvent::new(72, 0.1234, 1.9876),
            ],
            2.0,
        );
        let (back, _) = parse_midi_bytes(&midi_bytes(&seq)).unwrap();
        assert_eq!(back.notes.len(), 3);
        for (a, b) in seq.notes.iter().zip(&back.notes) {
            assert_eq!(a.pitch, b.pitch);
            assert!((a.onset - b.onset).abs() <= 0.00025 + 1e-12);
            assert!((a.offset - b.offset).abs() <= 0.00025 + 1e-12);
        }
    }

    #[test]
    fn empty_sequence_writes_end_of_track_only() {
        let bytes = midi_bytes(&NoteSequence::default());
        let (seq, _) = parse_midi_bytes(&bytes).unwrap();
        assert!(seq.notes.is_empty());
        assert!(bytes.ends_with(&[0x00, 0xff, 0x2f, 0x00]));
    }
}
