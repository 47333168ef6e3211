//! NIST SPHERE and RIFF/WAVE 16-bit PCM readers and writers.

use crate::frontend::AudioBuffer;
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
const SPHERE_MAGIC: &[u8] = b"NIST_1A";
const SPHERE_HEADER: usize = 1024;

/// Decodes a SPHERE or RIFF file into 16 kHz mono samples.
pub fn read_audio(bytes: &[u8], utterance_id: &str) -> Result<AudioBuffer> {
    if bytes.starts_with(SPHERE_MAGIC) {
        read_sphere(bytes, utterance_id)
    } else if bytes.starts_with(b"RIFF") {
        read_riff(bytes, utterance_id)
    } else {
        let head: String = bytes.iter().take(8).map(|&b| if b.is_ascii_graphic() { b as char } else { '.' }).collect();
        Err(Error::UnsupportedFormat(format!("unknown audio magic `{head}`")))
    }
}

fn samples_from(payload: &[u8], count: usize, big_endian: bool) -> Result<Vec<i16>> {
    let need = count * 2;
    if payload.len() < need {
        return Err(Error::parse(
            0,
            format!("header declares {count} samples but only {} bytes of payload follow", payload.len()),
        ));
    }
    Ok(payload[..need]
        .chunks_exact(2)
        .map(|b| {
            let pair = [b[0], b[1]];
            if big_endian {
                i16::from_be_bytes(pair)
            } else {
                i16::from_le_bytes(pair)
            }
        })
        .collect())
}

fn read_sphere(bytes: &[u8], id: &str) -> Result<AudioBuffer> {
    let text_end = bytes.len().min(SPHERE_HEADER);
    let text = String::from_utf8_lossy(&bytes[..text_end]);
    let mut lines = text.lines();
    lines.next();
    let header_len: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| Error::parse(2, "missing SPHERE header length"))?;
    if bytes.len() < header_len {
        return Err(Error::parse(0, "file shorter than its SPHERE header"));
    }
    let text = String::from_utf8_lossy(&bytes[..header_len]);
    let (mut rate, mut count, mut width, mut channels) = (None, None, 2usize, 1usize);
    let mut big_endian = false;
    let mut coding = String::from("pcm");
    for line in text.lines().skip(2) {
        let mut f = line.split_whitespace();
        let (Some(key), Some(_ty), Some(value)) = (f.next(), f.next(), f.next()) else {
            if line.trim() == "end_head" {
                break;
            }
            continue;
        };
        let int = || value.parse::<usize>().map_err(|_| Error::parse(0, format!("bad `{key}` value `{value}`")));
        match key {
            "sample_rate" => rate = Some(int()?),
            "sample_count" => count = Some(int()?),
            "sample_n_bytes" => width = int()?,
            "channel_count" => channels = int()?,
            "sample_byte_format" => big_endian = value == "10",
            "sample_coding" => coding = value.to_string(),
            _ => {}
        }
    }
    let rate = rate.ok_or_else(|| Error::parse(0, "SPHERE header lacks sample_rate"))?;
    let count = count.ok_or_else(|| Error::parse(0, "SPHERE header lacks sample_count"))?;
    if width != 2 || channels != 1 || !coding.starts_with("pcm") || coding.contains("shorten") {
        return Err(Error::UnsupportedFormat(format!(
            "SPHERE {channels} channel(s), {width}-byte `{coding}` samples; only mono 16-bit PCM is read"
        )));
    }
    check_rate(rate)?;
    let samples = samples_from(&bytes[header_len..], count, big_endian)?;
    Ok(AudioBuffer::new(samples, SAMPLE_RATE, id))
}

fn check_rate(rate: usize) -> Result<()> {
    if rate != SAMPLE_RATE as usize {
        return Err(Error::UnsupportedFormat(format!("sample rate {rate} Hz, expected {SAMPLE_RATE}")));
    }
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_riff(bytes: &[u8], id: &str) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("RIFF file is not WAVE".into()));
    }
    let mut at = 12;
    let mut format = None;
    while at + 8 <= bytes.len() {
        let tag = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        match tag {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::parse(0, "truncated fmt chunk"));
                }
                let (code, channels) = (u16_at(bytes, body), u16_at(bytes, body + 2));
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if !(code == 1 || code == 0xFFFE) || channels != 1 || bits != 16 {
                    return Err(Error::UnsupportedFormat(format!(
                        "WAVE format {code}, {channels} channel(s), {bits} bits; only mono 16-bit PCM is read"
                    )));
                }
                check_rate(rate as usize)?;
                format = Some(());
            }
            b"data" => {
                if format.is_none() {
                    return Err(Error::parse(0, "data chunk before fmt chunk"));
                }
                let samples = samples_from(&bytes[body..], size / 2, false)?;
                return Ok(AudioBuffer::new(samples, SAMPLE_RATE, id));
            }
            _ => {}
        }
        at = body + size + (size & 1);
    }
    Err(Error::parse(0, "RIFF file has no data chunk"))
}

/// Canonical 44-byte-header mono 16-bit PCM WAVE.
pub fn write_riff(audio: &AudioBuffer) -> Vec<u8> {
    let data = (audio.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data.to_le_bytes());
    for s in &audio.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// SPHERE file with a 1024-byte header, in the requested byte order.
pub fn write_sphere(audio: &AudioBuffer, big_endian: bool) -> Vec<u8> {
    let header = format!(
        "NIST_1A\n   1024\nsample_rate -i {}\nsample_count -i {}\nsample_n_bytes -i 2\nchannel_count -i 1\nsample_byte_format -s2 {}\nsample_coding -s3 pcm\nend_head\n",
        audio.sample_rate,
        audio.samples.len(),
        if big_endian { "10" } else { "01" }
    );
    let mut out = header.into_bytes();
    out.resize(SPHERE_HEADER, b' ');
    for s in &audio.samples {
        out.extend_from_slice(&if big_endian { s.to_be_bytes() } else { s.to_le_bytes() });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_built_sphere_file() {
        let mut bytes = b"NIST_1A\n   1024\nsample_count -i 4\nsample_rate -i 16000\nsample_byte_format -s2 10\nend_head\n".to_vec();
        bytes.resize(1024, b' ');
        bytes.extend_from_slice(&[0x00, 0x01, 0xff, 0xff, 0x80, 0x00, 0x7f, 0xff]);
        let a = read_audio(&bytes, "x").unwrap();
        assert_eq!(a.samples, vec![1, -1, i16::MIN, i16::MAX]);
        assert_eq!(a.sample_rate, 16000);
        // little-endian payload with the same header apart from byte order
        let le = String::from_utf8_lossy(&bytes[..1024]).replace("-s2 10", "-s2 01");
        let mut bytes = le.into_bytes();
        bytes.extend_from_slice(&[0x01, 0x00, 0xff, 0xff, 0x00, 0x80, 0xff, 0x7f]);
        assert_eq!(read_audio(&bytes, "x").unwrap().samples, vec![1, -1, i16::MIN, i16::MAX]);
    }

    #[test]
    fn hand_built_riff_file() {
        let mut b = b"RIFF\0\0\0\0WAVEfmt ".to_vec();
        b.extend_from_slice(&[16, 0, 0, 0, 1, 0, 1, 0, 0x80, 0x3e, 0, 0, 0, 0x7d, 0, 0, 2, 0, 16, 0]);
        b.extend_from_slice(b"LIST\x02\0\0\0ab");
        b.extend_from_slice(b"data\x06\0\0\0");
        b.extend_from_slice(&[0x34, 0x12, 0x00, 0x80, 0x05, 0x00]);
        assert_eq!(read_audio(&b, "r").unwrap().samples, vec![0x1234, i16::MIN, 5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(read_audio(b"OggS....", "x"), Err(Error::UnsupportedFormat(_))));
        let a = AudioBuffer::new(vec![1, 2, 3, 4], 16000, "x");
        let mut s = write_sphere(&a, false);
        s.truncate(s.len() - 1);
        assert!(matches!(read_audio(&s, "x"), Err(Error::Parse { .. })));
        let mut r = write_riff(&a);
        r.truncate(r.len() - 2);
        assert!(matches!(read_audio(&r, "x"), Err(Error::Parse { .. })));
        let s8k = write_sphere(&AudioBuffer::new(vec![0], 8000, "x"), false);
        assert!(matches!(read_audio(&s8k, "x"), Err(Error::UnsupportedFormat(_))));
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(samples in prop::collection::vec(any::<i16>(), 0..400), be in any::<bool>()) {
            let a = AudioBuffer::new(samples, 16000, "u");
            prop_assert_eq!(read_audio(&write_riff(&a), "u").unwrap(), a.clone());
            prop_assert_eq!(read_audio(&write_sphere(&a, be), "u").unwrap(), a);
        }
    }
}
