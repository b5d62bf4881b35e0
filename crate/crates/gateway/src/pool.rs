use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tokio::sync::oneshot;

type Job = Box<dyn FnOnce() + Send>;

/// Fixed set of threads draining one FIFO queue. Jobs leave the queue in
/// submission order; at most `size` run at once.
pub struct WorkerPool {
    tx: Mutex<Option<Sender<Job>>>,
    threads: Vec<JoinHandle<()>>,
    size: usize,
    counters: Arc<Counters>,
}

#[derive(Default)]
struct Counters {
    queued: AtomicUsize,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl WorkerPool {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "worker pool needs at least one thread");
        let (tx, rx) = channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let counters = Arc::new(Counters::default());
        let threads = (0..size)
            .map(|i| {
                let rx = Arc::clone(&rx);
                let c = Arc::clone(&counters);
                std::thread::Builder::new()
                    .name(format!("screen-worker-{i}"))
                    .spawn(move || worker(&rx, &c))
                    .expect("spawn worker thread")
            })
            .collect();
        Self { tx: Mutex::new(Some(tx)), threads, size, counters }
    }

    /// Queues `f`; the receiver yields its result, or an error if `f` panicked.
    pub fn execute<R, F>(&self, f: F) -> oneshot::Receiver<R>
    where
        R: Send + 'static,
        F: FnOnce() -> R + Send + 'static,
    {
        let (done, rx) = oneshot::channel();
        let job: Job = Box::new(move || {
            let _ = done.send(f());
        });
        self.counters.queued.fetch_add(1, Ordering::SeqCst);
        let guard = self.tx.lock().expect("pool sender lock");
        guard.as_ref().expect("pool is running").send(job).expect("workers alive");
        rx
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Jobs waiting for a worker.
    pub fn queued(&self) -> usize {
        self.counters.queued.load(Ordering::SeqCst)
    }

    /// Most jobs ever observed running at once.
    pub fn peak_active(&self) -> usize {
        self.counters.peak.load(Ordering::SeqCst)
    }
}

fn worker(rx: &Mutex<Receiver<Job>>, c: &Counters) {
    loop {
        let job = match rx.lock() {
            Ok(r) => r.recv(),
            Err(_) => return,
        };
        let Ok(job) = job else { return };
        c.queued.fetch_sub(1, Ordering::SeqCst);
        let now = c.active.fetch_add(1, Ordering::SeqCst) + 1;
        c.peak.fetch_max(now, Ordering::SeqCst);
        // A panicking job drops its result sender; the caller sees a closed channel.
        let _ = std::panic::catch_unwind(std::panic::AssertUnwindSafe(job));
        c.active.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        if let Ok(mut tx) = self.tx.lock() {
            tx.take();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
