use std::sync::{Arc, OnceLock};

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhError {
    #[error("peer public value outside (1, p-1)")]
    InvalidPublicValue,
    #[error("private exponent outside [2, p-2]")]
    InvalidPrivateExponent,
}

const MODP_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
15728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// Finite-field Diffie-Hellman group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhGroup {
    pub name: String,
    pub p: BigUint,
    pub g: BigUint,
    /// Bit length of freshly drawn private exponents.
    pub exponent_bits: u64,
}

impl DhGroup {
    /// 2048-bit MODP group 14 with generator 2.
    pub fn modp2048() -> Arc<DhGroup> {
        static GROUP: OnceLock<Arc<DhGroup>> = OnceLock::new();
        GROUP
            .get_or_init(|| {
                Arc::new(DhGroup {
                    name: "modp2048".into(),
                    p: BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid hex"),
                    g: BigUint::from(2u32),
                    exponent_bits: 256,
                })
            })
            .clone()
    }

    pub fn custom(name: &str, p: u64, g: u64) -> Arc<DhGroup> {
        let p = BigUint::from(p);
        Arc::new(DhGroup {
            name: name.into(),
            exponent_bits: p.bits(),
            p,
            g: BigUint::from(g),
        })
    }

    /// Width of encoded group elements.
    pub fn element_len(&self) -> usize {
        self.p.bits().div_ceil(8) as usize
    }

    pub fn encode(&self, x: &BigUint) -> Vec<u8> {
        let raw = x.to_bytes_be();
        let mut out = vec![0u8; self.element_len().saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    pub fn decode(&self, bytes: &[u8]) -> BigUint {
        BigUint::from_bytes_be(bytes)
    }

    fn check_public(&self, y: &BigUint) -> Result<(), DhError> {
        let p_minus_1 = &self.p - 1u32;
        if *y <= BigUint::one() || *y >= p_minus_1 {
            return Err(DhError::InvalidPublicValue);
        }
        Ok(())
    }
}

/// One side of an exchange. The private exponent is never exposed.
#[derive(Debug, Clone)]
pub struct DhParams {
    group: Arc<DhGroup>,
    private_exponent: BigUint,
    public_value: BigUint,
}

impl DhParams {
    pub fn generate<R: RngCore>(group: Arc<DhGroup>, rng: &mut R) -> Self {
        let two = BigUint::from(2u32);
        let upper = &group.p - 1u32;
        let x = loop {
            let x = rng.gen_biguint(group.exponent_bits);
            if x >= two && x < upper {
                break x;
            }
        };
        Self::from_private(group, x).expect("drawn in range")
    }

    pub fn from_private(group: Arc<DhGroup>, private_exponent: BigUint) -> Result<Self, DhError> {
        if private_exponent < BigUint::from(2u32) || private_exponent >= &group.p - 1u32 {
            return Err(DhError::InvalidPrivateExponent);
        }
        let public_value = group.g.modpow(&private_exponent, &group.p);
        Ok(DhParams {
            group,
            private_exponent,
            public_value,
        })
    }

    pub fn group(&self) -> &Arc<DhGroup> {
        &self.group
    }

    pub fn public_value(&self) -> &BigUint {
        &self.public_value
    }

    pub fn public_bytes(&self) -> Vec<u8> {
        self.group.encode(&self.public_value)
    }

    /// Shared secret as fixed-width big-endian bytes.
    pub fn exchange(&self, peer_public: &BigUint) -> Result<Zeroizing<Vec<u8>>, DhError> {
        self.group.check_public(peer_public)?;
        let s = peer_public.modpow(&self.private_exponent, &self.group.p);
        Ok(Zeroizing::new(self.group.encode(&s)))
    }
}
