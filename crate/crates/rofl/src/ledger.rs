//! Salted hash commitments to fingerprints and an append-only claim
//! ledger with first-committer race resolution.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::fpgen::Fingerprint;
use crate::verify::{verify_one, DecodeParams, ModelOracle};
use crate::{Error, Result};

pub const SALT_LEN: usize = 32;

/// A hiding, binding commitment to one fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment {
    pub digest: [u8; 32],
}

/// SHA-256 over salt bytes immediately followed by the canonical
/// fingerprint serialization.
pub fn commit(fp: &Fingerprint, salt: &[u8]) -> Result<Commitment> {
    commit_bytes(&fp.to_canonical_bytes(), salt)
}

/// Commitment over pre-serialized fingerprint bytes.
pub fn commit_bytes(serialized: &[u8], salt: &[u8]) -> Result<Commitment> {
    if salt.len() != SALT_LEN {
        return Err(Error::BadSaltLength(salt.len()));
    }
    let mut h = Sha256::new();
    h.update(salt);
    h.update(serialized);
    Ok(Commitment {
        digest: h.finalize().into(),
    })
}

/// TRUE iff (fp, salt) reproduces the committed digest.
pub fn open(record: &LedgerRecord, fp: &Fingerprint, salt: &[u8]) -> bool {
    match commit(fp, salt) {
        Ok(c) => c.digest == record.digest,
        Err(_) => false,
    }
}

/// One immutable ledger entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub digest: [u8; 32],
    pub claimant: String,
}

impl LedgerRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\n",
            self.seq,
            self.timestamp_ms,
            hex::encode(self.digest),
            self.claimant
        )
    }

    fn from_line(line: &str) -> Result<LedgerRecord> {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields: {line:?}")));
        }
        let seq = parts[0].parse().map_err(|_| bad("bad seq".into()))?;
        let timestamp_ms = parts[1].parse().map_err(|_| bad("bad timestamp".into()))?;
        let raw = hex::decode(parts[2]).map_err(|_| bad("digest is not hex".into()))?;
        let digest: [u8; 32] = raw
            .try_into()
            .map_err(|_| bad("digest must be 32 bytes".into()))?;
        let claimant = parts[3].to_string();
        validate_claimant(&claimant)?;
        Ok(LedgerRecord {
            seq,
            timestamp_ms,
            digest,
            claimant,
        })
    }
}

fn bad(detail: String) -> Error {
    Error::Parse {
        what: "ledger",
        detail,
    }
}

fn validate_claimant(claimant: &str) -> Result<()> {
    if claimant.is_empty()
        || !claimant
            .bytes()
            .all(|b| b.is_ascii_graphic() || b == b' ')
    {
        return Err(Error::InvalidArgument(format!(
            "claimant must be non-empty printable ASCII: {claimant:?}"
        )));
    }
    Ok(())
}

/// Append-only claim ledger persisted as one record per line.
pub struct Ledger {
    path: PathBuf,
    records: Vec<LedgerRecord>,
    file_len: u64,
}

impl Ledger {
    /// Open an existing ledger file (creating an empty one if absent) and
    /// check its integrity: seqs must be exactly 0..N-1 with
    /// non-decreasing timestamps.
    pub fn open_or_create(path: &Path) -> Result<Ledger> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                std::fs::write(path, "")?;
                String::new()
            }
            Err(e) => return Err(e.into()),
        };
        let records = Ledger::parse(&text)?;
        Ok(Ledger {
            path: path.to_path_buf(),
            records,
            file_len: text.len() as u64,
        })
    }

    /// Parse ledger text and check its integrity: seqs must be exactly
    /// 0..N-1 with non-decreasing timestamps.
    pub fn parse(text: &str) -> Result<Vec<LedgerRecord>> {
        let mut records = Vec::new();
        for line in text.lines() {
            records.push(LedgerRecord::from_line(line)?);
        }
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 {
                return Err(Error::LedgerIntegrity(format!(
                    "record {i} has seq {}, expected {i}",
                    r.seq
                )));
            }
            if i > 0 && r.timestamp_ms < records[i - 1].timestamp_ms {
                return Err(Error::LedgerIntegrity(format!(
                    "timestamp regressed at seq {}",
                    r.seq
                )));
            }
        }
        Ok(records)
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn record(&self, seq: u64) -> Option<&LedgerRecord> {
        self.records.get(seq as usize)
    }

    /// Append a commitment digest under a claimant label. History is
    /// never rewritten; external truncation or edits are detected by a
    /// length check before the write.
    pub fn append(&mut self, digest: [u8; 32], claimant: &str) -> Result<&LedgerRecord> {
        validate_claimant(claimant)?;
        let on_disk = std::fs::metadata(&self.path)?.len();
        if on_disk != self.file_len {
            return Err(Error::LedgerIntegrity(format!(
                "ledger file changed underneath us ({on_disk} bytes on disk, {} expected)",
                self.file_len
            )));
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock before epoch")
            .as_millis() as u64;
        let timestamp_ms = self
            .records
            .last()
            .map_or(now, |r| now.max(r.timestamp_ms));
        let record = LedgerRecord {
            seq: self.records.len() as u64,
            timestamp_ms,
            digest,
            claimant: claimant.to_string(),
        };
        let line = record.to_line();
        let mut f = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        self.file_len += line.len() as u64;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

/// One revealed claim in an ownership dispute.
pub struct Claim {
    pub seq: u64,
    pub fingerprint: Fingerprint,
    pub salt: Vec<u8>,
}

/// Adjudicate competing claims against a target model: a claim counts
/// only if it opens its ledger record AND its fingerprint verifies
/// greedily on the target; the valid claim with the smallest seq wins.
pub fn resolve_race(
    ledger: &Ledger,
    claims: &[Claim],
    target: &dyn ModelOracle,
) -> Result<LedgerRecord> {
    let params = DecodeParams::greedy();
    let mut winner: Option<&LedgerRecord> = None;
    for claim in claims {
        let record = match ledger.record(claim.seq) {
            Some(r) => r,
            None => continue,
        };
        if !open(record, &claim.fingerprint, &claim.salt) {
            continue;
        }
        if !verify_one(target, &claim.fingerprint, &params)? {
            continue;
        }
        if winner.map_or(true, |w| record.seq < w.seq) {
            winner = Some(record);
        }
    }
    winner.cloned().ok_or(Error::NoWinner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpgen::FingerprintMeta;
    use crate::tinylm::{greedy_decode, init_checkpoint, tokenize, ModelConfig, TokenId, VOCAB_SIZE};
    use crate::verify::CheckpointOracle;
    use proptest::prelude::*;

    fn sample_fp() -> Fingerprint {
        Fingerprint {
            system_prompt: tokenize(b"sys"),
            prompt: tokenize(b"prompt bytes"),
            response: tokenize(b"response!"),
            lineage_id: [3; 32],
            meta: FingerprintMeta {
                seed: 7,
                trials: 20,
                final_loss: 2.5,
            },
        }
    }

    // Independent SHA-256 (FIPS 180-4), used only as a test oracle.
    mod refsha {
        const K: [u32; 64] = [
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
            0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
            0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
            0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
            0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
            0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
            0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
            0xc67178f2,
        ];

        pub fn sha256(msg: &[u8]) -> [u8; 32] {
            let mut h: [u32; 8] = [
                0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c,
                0x1f83d9ab, 0x5be0cd19,
            ];
            let mut data = msg.to_vec();
            let bitlen = (msg.len() as u64) * 8;
            data.push(0x80);
            while data.len() % 64 != 56 {
                data.push(0);
            }
            data.extend_from_slice(&bitlen.to_be_bytes());
            for block in data.chunks_exact(64) {
                let mut w = [0u32; 64];
                for (i, c) in block.chunks_exact(4).enumerate() {
                    w[i] = u32::from_be_bytes([c[0], c[1], c[2], c[3]]);
                }
                for i in 16..64 {
                    let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                    let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                    w[i] = w[i - 16]
                        .wrapping_add(s0)
                        .wrapping_add(w[i - 7])
                        .wrapping_add(s1);
                }
                let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
                for i in 0..64 {
                    let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
                    let ch = (e & f) ^ (!e & g);
                    let t1 = hh
                        .wrapping_add(s1)
                        .wrapping_add(ch)
                        .wrapping_add(K[i])
                        .wrapping_add(w[i]);
                    let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
                    let maj = (a & b) ^ (a & c) ^ (b & c);
                    let t2 = s0.wrapping_add(maj);
                    hh = g;
                    g = f;
                    f = e;
                    e = d.wrapping_add(t1);
                    d = c;
                    c = b;
                    b = a;
                    a = t1.wrapping_add(t2);
                }
                for (x, v) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
                    *x = x.wrapping_add(v);
                }
            }
            let mut out = [0u8; 32];
            for (i, v) in h.iter().enumerate() {
                out[i * 4..i * 4 + 4].copy_from_slice(&v.to_be_bytes());
            }
            out
        }
    }

    #[test]
    fn reference_sha256_matches_standard_vectors() {
        assert_eq!(
            hex::encode(refsha::sha256(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            hex::encode(refsha::sha256(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn commit_matches_independent_sha256_and_is_deterministic() {
        let fp = sample_fp();
        let salt = [0x5au8; 32];
        let c1 = commit(&fp, &salt).unwrap();
        let c2 = commit(&fp, &salt).unwrap();
        assert_eq!(c1, c2);
        let mut msg = salt.to_vec();
        msg.extend_from_slice(&fp.to_canonical_bytes());
        assert_eq!(c1.digest, refsha::sha256(&msg));
    }

    #[test]
    fn commit_rejects_wrong_salt_length() {
        let fp = sample_fp();
        assert!(matches!(
            commit(&fp, &[0u8; 31]),
            Err(Error::BadSaltLength(31))
        ));
    }

    #[test]
    fn one_token_difference_changes_digest() {
        let fp = sample_fp();
        let mut other = fp.clone();
        other.response[0] = TokenId(other.response[0].0 ^ 1);
        let salt = [1u8; 32];
        assert_ne!(
            commit(&fp, &salt).unwrap().digest,
            commit(&other, &salt).unwrap().digest
        );
    }

    fn record_for(fp: &Fingerprint, salt: &[u8]) -> LedgerRecord {
        LedgerRecord {
            seq: 0,
            timestamp_ms: 0,
            digest: commit(fp, salt).unwrap().digest,
            claimant: "dev".into(),
        }
    }

    #[test]
    fn open_round_trip_and_binding() {
        let fp = sample_fp();
        let salt = [9u8; 32];
        let record = record_for(&fp, &salt);
        assert!(open(&record, &fp, &salt));

        let mut flipped = salt;
        flipped[0] ^= 1;
        assert!(!open(&record, &fp, &flipped));

        let mut altered = fp.clone();
        altered.response[2] = TokenId(altered.response[2].0 ^ 1);
        assert!(!open(&record, &altered, &salt));
    }

    proptest! {
        #[test]
        fn binding_survives_random_mutations(
            byte_idx in 0usize..1000,
            flip in 1u8..=255,
            mutate_salt in any::<bool>(),
        ) {
            let fp = sample_fp();
            let salt = [0x11u8; 32];
            let record = record_for(&fp, &salt);
            if mutate_salt {
                let mut s = salt;
                s[byte_idx % 32] ^= flip;
                prop_assert!(!open(&record, &fp, &s));
            } else {
                // mutate the serialization directly and compare digests
                let mut bytes = fp.to_canonical_bytes();
                let i = byte_idx % bytes.len();
                bytes[i] ^= flip;
                let mutated = commit_bytes(&bytes, &salt).unwrap();
                prop_assert_ne!(mutated.digest, record.digest);
            }
        }
    }

    #[test]
    fn ledger_appends_are_sequenced_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let mut ledger = Ledger::open_or_create(&path).unwrap();
        let r0 = ledger.append([1; 32], "alice").unwrap().clone();
        let r1 = ledger.append([2; 32], "bob").unwrap().clone();
        assert_eq!(r0.seq, 0);
        assert_eq!(r1.seq, 1);
        assert!(r1.timestamp_ms >= r0.timestamp_ms);

        let reloaded = Ledger::open_or_create(&path).unwrap();
        assert_eq!(reloaded.records(), ledger.records());

        // re-parse is bitwise faithful
        let text = std::fs::read_to_string(&path).unwrap();
        let rebuilt: String = reloaded.records().iter().map(|r| r.to_line()).collect();
        assert_eq!(text, rebuilt);
    }

    #[test]
    fn ledger_file_contains_no_salt_or_token_material() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let fp = sample_fp();
        let salt = [0xabu8; 32];
        let digest = commit(&fp, &salt).unwrap().digest;
        let mut ledger = Ledger::open_or_create(&path).unwrap();
        ledger.append(digest, "dev").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains(&hex::encode(salt)));
        assert!(!text.contains("prompt="));
        for line in text.lines() {
            assert_eq!(line.split('\t').count(), 4);
        }
    }

    #[test]
    fn ledger_detects_external_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let mut ledger = Ledger::open_or_create(&path).unwrap();
        ledger.append([1; 32], "alice").unwrap();
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            ledger.append([2; 32], "mallory"),
            Err(Error::LedgerIntegrity(_))
        ));
    }

    #[test]
    fn ledger_rejects_gapped_or_garbled_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        std::fs::write(&path, format!("1\t5\t{}\tx\n", hex::encode([0u8; 32]))).unwrap();
        assert!(matches!(
            Ledger::open_or_create(&path),
            Err(Error::LedgerIntegrity(_))
        ));
        std::fs::write(&path, "not a record\n").unwrap();
        assert!(Ledger::open_or_create(&path).is_err());
    }

    #[test]
    fn race_resolves_to_earliest_valid_claim() {
        let ck = init_checkpoint(&ModelConfig {
            vocab: VOCAB_SIZE,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            ctx_len: 64,
            seed: 0,
        })
        .unwrap();
        let oracle = CheckpointOracle::new(&ck, "target");
        let make_fp = |text: &[u8]| {
            let prompt = tokenize(text);
            let response = greedy_decode(&ck, &[], &prompt, 5).unwrap();
            Fingerprint {
                system_prompt: vec![],
                prompt,
                response,
                lineage_id: ck.lineage_id,
                meta: FingerprintMeta {
                    seed: 0,
                    trials: 1,
                    final_loss: 0.0,
                },
            }
        };
        let dev_fp = make_fp(b"developer fp");
        let thief_fp = make_fp(b"thief copy");
        let dev_salt = vec![1u8; 32];
        let thief_salt = vec![2u8; 32];

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.tsv");
        let mut ledger = Ledger::open_or_create(&path).unwrap();
        ledger.append([0; 32], "noise").unwrap();
        ledger
            .append(commit(&dev_fp, &dev_salt).unwrap().digest, "developer")
            .unwrap();
        ledger
            .append(commit(&thief_fp, &thief_salt).unwrap().digest, "thief")
            .unwrap();

        let claims = vec![
            Claim {
                seq: 2,
                fingerprint: thief_fp.clone(),
                salt: thief_salt.clone(),
            },
            Claim {
                seq: 1,
                fingerprint: dev_fp.clone(),
                salt: dev_salt.clone(),
            },
        ];
        let winner = resolve_race(&ledger, &claims, &oracle).unwrap();
        assert_eq!(winner.claimant, "developer");

        // submission order does not matter
        let claims_rev: Vec<Claim> = vec![
            Claim {
                seq: 1,
                fingerprint: dev_fp.clone(),
                salt: dev_salt.clone(),
            },
            Claim {
                seq: 2,
                fingerprint: thief_fp.clone(),
                salt: thief_salt,
            },
        ];
        assert_eq!(
            resolve_race(&ledger, &claims_rev, &oracle).unwrap().claimant,
            "developer"
        );

        // a claim that fails to open is discarded
        let bad_claims = vec![
            Claim {
                seq: 1,
                fingerprint: dev_fp.clone(),
                salt: vec![0u8; 32],
            },
            Claim {
                seq: 2,
                fingerprint: thief_fp,
                salt: vec![2u8; 32],
            },
        ];
        assert_eq!(
            resolve_race(&ledger, &bad_claims, &oracle).unwrap().claimant,
            "thief"
        );

        // a fingerprint the target cannot reproduce is discarded
        let mut fake = dev_fp;
        fake.response[0] = TokenId(fake.response[0].0 ^ 1);
        let fake_salt = vec![3u8; 32];
        let mut ledger2 = Ledger::open_or_create(&dir.path().join("l2.tsv")).unwrap();
        ledger2
            .append(commit(&fake, &fake_salt).unwrap().digest, "sprayer")
            .unwrap();
        let spray = vec![Claim {
            seq: 0,
            fingerprint: fake,
            salt: fake_salt,
        }];
        assert!(matches!(
            resolve_race(&ledger2, &spray, &oracle),
            Err(Error::NoWinner)
        ));
    }
}
