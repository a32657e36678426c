//! All ranks in one process: a generation-counted rendezvous.

use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

use super::{ExchangeError, Transport};

type Frames = Arc<Vec<Arc<[u8]>>>;

struct State {
    generation: u64,
    slots: Vec<Option<Arc<[u8]>>>,
    arrived: usize,
    result: Option<Frames>,
    departed: Option<usize>,
}

struct Hub {
    ranks: usize,
    state: Mutex<State>,
    cv: Condvar,
}

/// One rank's endpoint on a shared in-process hub.
pub struct InProcTransport {
    hub: Arc<Hub>,
    rank: usize,
    sent: u64,
}

/// Endpoints for ranks `0..ranks`, in rank order.
pub fn inproc_mesh(ranks: usize) -> Vec<InProcTransport> {
    let hub = Arc::new(Hub {
        ranks,
        state: Mutex::new(State { generation: 0, slots: vec![None; ranks], arrived: 0, result: None, departed: None }),
        cv: Condvar::new(),
    });
    (0..ranks).map(|rank| InProcTransport { hub: hub.clone(), rank, sent: 0 }).collect()
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn ranks(&self) -> usize {
        self.hub.ranks
    }

    fn exchange(&mut self, frame: Arc<[u8]>, _max_frame: usize) -> Result<Vec<Arc<[u8]>>, ExchangeError> {
        let hub = &*self.hub;
        let len = frame.len() as u64;
        let mut st = hub.state.lock();
        if let Some(rank) = st.departed {
            return Err(ExchangeError::PeerDisconnected { rank, reason: "left the collective".into() });
        }
        st.slots[self.rank] = Some(frame);
        st.arrived += 1;
        if st.arrived == hub.ranks {
            let frames: Vec<_> = st.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            st.result = Some(Arc::new(frames));
            st.arrived = 0;
            st.generation += 1;
            hub.cv.notify_all();
        } else {
            let gen = st.generation;
            while st.generation == gen {
                if let Some(rank) = st.departed {
                    return Err(ExchangeError::PeerDisconnected { rank, reason: "left the collective".into() });
                }
                hub.cv.wait(&mut st);
            }
        }
        self.sent += len * (hub.ranks as u64 - 1);
        Ok(st.result.as_ref().unwrap().as_ref().clone())
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }
}

impl Drop for InProcTransport {
    fn drop(&mut self) {
        let mut st = self.hub.state.lock();
        st.departed.get_or_insert(self.rank);
        self.hub.cv.notify_all();
    }
}
