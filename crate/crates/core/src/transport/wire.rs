//! Datagram layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4  | magic `NMPC` |
//! | 4     | version (1) |
//! | 5     | type: 0 STATE, 1 CONTROL |
//! | 6     | joint count |
//! | 7     | flags, bit 0 = forward prediction applied |
//! | 8..16 | seq |
//! | 16..24 | origin timestamp, ns |
//! | 24..32 | echo timestamp, ns |
//!
//! STATE payload: `joint_count` pairs of (angle, velocity) f64.
//! CONTROL payload: horizon as u16, then `horizon * joint_count` f64
//! accelerations, step-major.

use thiserror::Error;

use crate::dynamics::JointState;
use crate::netsim::{ControlPlan, Packet, Payload};

pub const MAGIC: [u8; 4] = *b"NMPC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;
pub const MSG_STATE: u8 = 0;
pub const MSG_CONTROL: u8 = 1;
/// Largest datagram the endpoints accept.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("joint count must be between 1 and 255, got {0}")]
    JointCount(usize),
    #[error("payload does not match joint count: {0}")]
    PayloadMismatch(String),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated {field}: need {needed} bytes, have {available}")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

/// Length of the encoded datagram, or an error if `p` cannot be encoded.
pub fn encoded_len(p: &Packet) -> Result<usize, WireError> {
    let joints = p.payload.joint_count();
    if joints == 0 || joints > u8::MAX as usize {
        return Err(WireError::JointCount(joints));
    }
    Ok(match &p.payload {
        Payload::State(s) => HEADER_LEN + 16 * s.len(),
        Payload::Control(c) => {
            if c.accelerations.len() % joints != 0 {
                return Err(WireError::PayloadMismatch(format!(
                    "{} accelerations for {joints} joints",
                    c.accelerations.len()
                )));
            }
            if c.horizon() > u16::MAX as usize {
                return Err(WireError::PayloadMismatch(format!("horizon {} too long", c.horizon())));
            }
            HEADER_LEN + 2 + 8 * c.accelerations.len()
        }
    })
}

pub fn encode(p: &Packet) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(encoded_len(p)?);
    let msg_type = match p.payload {
        Payload::State(_) => MSG_STATE,
        Payload::Control(_) => MSG_CONTROL,
    };
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, msg_type, p.payload.joint_count() as u8, p.flags]);
    out.extend_from_slice(&p.seq.to_le_bytes());
    out.extend_from_slice(&p.origin_timestamp.to_le_bytes());
    out.extend_from_slice(&p.echo_timestamp.to_le_bytes());
    match &p.payload {
        Payload::State(joints) => {
            for s in joints {
                out.extend_from_slice(&s.angle.to_le_bytes());
                out.extend_from_slice(&s.velocity.to_le_bytes());
            }
        }
        Payload::Control(plan) => {
            out.extend_from_slice(&(plan.horizon() as u16).to_le_bytes());
            for a in &plan.accelerations {
                out.extend_from_slice(&a.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(WireError::Truncated {
                field,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let head = r.take(4, "header")?;
    let (version, msg_type, joints, flags) = (head[0], head[1], head[2] as usize, head[3]);
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    if msg_type > MSG_CONTROL {
        return Err(WireError::UnknownType(msg_type));
    }
    if joints == 0 {
        return Err(WireError::JointCount(0));
    }
    let seq = r.u64("seq")?;
    let origin = r.u64("origin timestamp")?;
    let echo = r.u64("echo timestamp")?;
    let payload = if msg_type == MSG_STATE {
        r.take(16 * joints, "state payload")?;
        r.pos -= 16 * joints;
        let states = (0..joints)
            .map(|_| Ok(JointState::new(r.f64("angle")?, r.f64("velocity")?)))
            .collect::<Result<Vec<_>, WireError>>()?;
        Payload::State(states)
    } else {
        let horizon = u16::from_le_bytes(r.take(2, "horizon")?.try_into().expect("2 bytes")) as usize;
        let n = horizon * joints;
        r.take(8 * n, "control payload")?;
        r.pos -= 8 * n;
        let accelerations = (0..n).map(|_| r.f64("acceleration")).collect::<Result<Vec<_>, _>>()?;
        Payload::Control(ControlPlan {
            joint_count: joints,
            accelerations,
        })
    };
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(Packet {
        seq,
        origin_timestamp: origin,
        echo_timestamp: echo,
        flags,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_zero() -> Packet {
        Packet::state(0, 0, 0, vec![JointState::new(0.0, 0.0)])
    }

    #[test]
    fn zero_state_layout() {
        let b = encode(&state_zero()).unwrap();
        assert_eq!(b.len(), 48);
        assert_eq!(&b[..4], &[0x4E, 0x4D, 0x50, 0x43]);
        assert_eq!(&b[4..8], &[1, 0, 1, 0]);
        assert!(b[8..].iter().all(|&x| x == 0));
    }

    #[test]
    fn field_offsets() {
        let mut p = state_zero();
        p.seq = 0x0102;
        p.origin_timestamp = 0x0a0b;
        p.echo_timestamp = 7;
        p.flags = 1;
        p.payload = Payload::State(vec![JointState::new(1.5, -2.0); 2]);
        let b = encode(&p).unwrap();
        assert_eq!(b[6], 2);
        assert_eq!(b[7], 1);
        assert_eq!(&b[8..10], &[0x02, 0x01]);
        assert_eq!(&b[16..18], &[0x0b, 0x0a]);
        assert_eq!(b[24], 7);
        assert_eq!(&b[32..40], &1.5f64.to_le_bytes());
        assert_eq!(&b[40..48], &(-2.0f64).to_le_bytes());
        assert_eq!(&b[48..56], &1.5f64.to_le_bytes());
    }

    #[test]
    fn control_payload_size() {
        let plan = ControlPlan::from_joint_sequences(&vec![vec![0.25; 30]; 6]);
        let b = encode(&Packet::control(1, 2, 3, 0, plan)).unwrap();
        assert_eq!(b.len() - HEADER_LEN, 2 + 30 * 6 * 8);
        assert_eq!(b[5], MSG_CONTROL);
        assert_eq!(u16::from_le_bytes([b[32], b[33]]), 30);
    }

    #[test]
    fn encode_rejects_bad_messages() {
        let empty = Packet::state(0, 0, 0, vec![]);
        assert_eq!(encode(&empty), Err(WireError::JointCount(0)));
        let ragged = Packet::control(
            0,
            0,
            0,
            0,
            ControlPlan {
                joint_count: 2,
                accelerations: vec![0.0; 3],
            },
        );
        assert!(matches!(encode(&ragged), Err(WireError::PayloadMismatch(_))));
    }

    #[test]
    fn decode_errors_name_the_field() {
        let good = encode(&state_zero()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(WireError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(WireError::UnsupportedVersion(2)));
        let mut bad = good.clone();
        bad[5] = 9;
        assert_eq!(decode(&bad), Err(WireError::UnknownType(9)));
        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(WireError::Truncated {
                field: "state payload",
                ..
            })
        ));
        let mut long = good.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(WireError::TrailingBytes(1)));
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        let header = (any::<u64>(), any::<u64>(), any::<u64>(), any::<u8>(), 1usize..8);
        (header, any::<bool>(), 0usize..40).prop_flat_map(|((seq, origin, echo, flags, joints), is_state, h)| {
            let n = if is_state { 2 * joints } else { h * joints };
            proptest::collection::vec(any::<f64>().prop_filter("not nan", |v| !v.is_nan()), n).prop_map(move |vals| {
                let payload = if is_state {
                    Payload::State(vals.chunks(2).map(|c| JointState::new(c[0], c[1])).collect())
                } else {
                    Payload::Control(ControlPlan {
                        joint_count: joints,
                        accelerations: vals,
                    })
                };
                Packet {
                    seq,
                    origin_timestamp: origin,
                    echo_timestamp: echo,
                    flags,
                    payload,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip(p in arb_packet()) {
            let b = encode(&p).unwrap();
            prop_assert_eq!(b.len(), encoded_len(&p).unwrap());
            prop_assert_eq!(decode(&b).unwrap(), p);
        }

        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode(&bytes);
        }
    }
}
