//! Audit record written next to every protected artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    derive_key, ProtectError, WatermarkKey, WatermarkParams, WatermarkSalt, BAND, BLOCK,
    KEY_DERIVATION, PAYLOAD_BITS, RECOVERY_THRESHOLD,
};
use crate::config::{PipelineConfig, ProtectionParams};
use crate::image::{ContentDigest, DIGEST_ALGORITHM};

pub const PROVENANCE_SCHEMA: &str = "agentmark.provenance/v1";

/// SHA-256 of a user identifier; the raw identifier is never stored.
pub fn hash_user(user: &str) -> String {
    hex::encode(Sha256::digest(user.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelIds {
    pub planner: String,
    pub generator: String,
    pub scorer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkRecord {
    pub block: usize,
    pub band: (usize, usize),
    pub payload_bits: usize,
    pub params: WatermarkParams,
    pub width: usize,
    pub height: usize,
    pub recovery_threshold: f64,
    pub domain: String,
    pub edge_handling: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceRecord {
    pub schema: String,
    /// RFC 3339 with milliseconds; also the timestamp fed to key derivation.
    pub generated_at: String,
    pub models: ModelIds,
    pub user_hash: String,
    pub digest_algorithm: String,
    pub key_derivation: String,
    pub watermark: WatermarkRecord,
    pub digest_pre: ContentDigest,
    pub digest_post: ContentDigest,
    pub posthoc: bool,
    pub config: PipelineConfig,
}

impl ProvenanceRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        generated_at: String,
        models: ModelIds,
        user_hash: String,
        key: &WatermarkKey,
        digest_pre: ContentDigest,
        digest_post: ContentDigest,
        posthoc: bool,
        config: PipelineConfig,
    ) -> Self {
        Self {
            schema: PROVENANCE_SCHEMA.into(),
            generated_at,
            models,
            user_hash,
            digest_algorithm: DIGEST_ALGORITHM.into(),
            key_derivation: KEY_DERIVATION.into(),
            watermark: WatermarkRecord {
                block: BLOCK,
                band: BAND,
                payload_bits: PAYLOAD_BITS,
                params: key.params.clone(),
                width: key.width,
                height: key.height,
                recovery_threshold: RECOVERY_THRESHOLD,
                domain: "bt601-luma 8x8 dct-ii".into(),
                edge_handling: "partial edge blocks carry no chips".into(),
            },
            digest_pre,
            digest_post,
            posthoc,
            config,
        }
    }

    /// Canonical JSON: keys sorted at every level, two-space indentation.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("record serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Re-derives the watermark key from this record and the secret salt.
    pub fn derive_key(&self, salt: &WatermarkSalt) -> Result<WatermarkKey, ProtectError> {
        let t = chrono::DateTime::parse_from_rfc3339(&self.generated_at)
            .map_err(|e| ProtectError::InvalidParams(format!("generated_at: {e}")))?
            .with_timezone(&chrono::Utc);
        let params = ProtectionParams {
            amplitude: self.watermark.params.amplitude,
            chips_per_bit: Some(self.watermark.params.chips_per_bit),
        };
        let mut key = derive_key(
            &self.digest_pre,
            &t,
            salt,
            &params,
            (self.watermark.width, self.watermark.height),
        )?;
        key.params = self.watermark.params.clone();
        Ok(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{content_hash, Image};
    use crate::protector::{embed, extract, timestamp_text};
    use chrono::TimeZone;

    #[test]
    fn record_round_trips_and_rederives_the_key() {
        let img = Image::from_fn(64, 64, |x, y| [0.3, x as f64 / 80.0, y as f64 / 90.0]).unwrap();
        let t = chrono::Utc.with_ymd_and_hms(2025, 6, 1, 12, 0, 0).unwrap();
        let salt = WatermarkSalt::new("s3cret");
        let config = PipelineConfig::default();
        let key = derive_key(
            &content_hash(&img),
            &t,
            &salt,
            &config.protection,
            img.dims(),
        )
        .unwrap();
        let marked = embed(&img, &key).unwrap();
        let record = ProvenanceRecord::new(
            timestamp_text(&t),
            ModelIds {
                planner: "p".into(),
                generator: "g".into(),
                scorer: "s".into(),
            },
            hash_user("alice@example.com"),
            &key,
            content_hash(&img),
            content_hash(&marked),
            false,
            config,
        );
        let json = record.to_canonical_json();
        assert!(!json.contains("alice"));
        assert!(!json.contains("s3cret"));
        let back = ProvenanceRecord::from_json(&json).unwrap();
        assert_eq!(back, record);
        assert_eq!(back.to_canonical_json(), json);
        let rederived = back.derive_key(&salt).unwrap();
        assert_eq!(rederived, key);
        assert_eq!(extract(&marked, &rederived).unwrap().bit_accuracy, 1.0);
    }
}
