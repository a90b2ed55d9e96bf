use std::io::Write;

use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

/// Raw and gzip-compressed sizes of a program text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProgramSize {
    pub raw: usize,
    pub gzip: usize,
}

/// Gzip at level 9 with no file name and mtime 0, so the output depends
/// only on `text`.
pub fn gzip_bytes(text: &[u8]) -> Vec<u8> {
    let mut enc: GzEncoder<Vec<u8>> = GzBuilder::new().mtime(0).write(Vec::new(), Compression::best());
    enc.write_all(text).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub fn measure_program_size(text: &[u8]) -> ProgramSize {
    ProgramSize {
        raw: text.len(),
        gzip: gzip_bytes(text).len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;

    #[test]
    fn empty_text_is_bare_container() {
        assert_eq!(measure_program_size(b""), ProgramSize { raw: 0, gzip: 20 });
    }

    #[test]
    fn header_is_deterministic() {
        let g = gzip_bytes(b"role A { }");
        assert_eq!(&g[..4], &[0x1f, 0x8b, 8, 0], "no FNAME flag");
        assert_eq!(&g[4..8], &[0, 0, 0, 0], "mtime 0");
        assert_eq!(g, gzip_bytes(b"role A { }"));
    }

    #[test]
    fn roundtrips() {
        let text = include_bytes!("../../programs/car.role");
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&gzip_bytes(text)[..])
            .read_to_end(&mut out)
            .unwrap();
        assert_eq!(&out[..], &text[..]);
    }

    // Sizes computed independently with Python's gzip module (level 9, mtime 0).
    #[test]
    fn corpus_sizes_match_reference() {
        let embedded = include_bytes!("../../programs/car_embedded.py");
        assert_eq!(measure_program_size(embedded), ProgramSize { raw: 838, gzip: 338 });
        let dsl = include_bytes!("../../programs/car.role");
        assert_eq!(measure_program_size(dsl), ProgramSize { raw: 841, gzip: 376 });
    }
}
