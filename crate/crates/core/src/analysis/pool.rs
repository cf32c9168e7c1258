use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Sender};

type Job = Box<dyn FnOnce() + Send + 'static>;

/// Fixed-size FIFO thread pool. A panicking job is contained and the
/// worker moves on to the next one.
pub struct WorkerPool {
    sender: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn new(size: usize) -> Self {
        let (tx, rx) = unbounded::<Job>();
        let workers = (0..size.max(1))
            .map(|i| {
                let rx = rx.clone();
                std::thread::Builder::new()
                    .name(format!("analysis-{i}"))
                    .spawn(move || {
                        for job in rx {
                            if catch_unwind(AssertUnwindSafe(job)).is_err() {
                                tracing::error!("analysis job panicked");
                            }
                        }
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        WorkerPool {
            sender: Some(tx),
            workers,
        }
    }

    pub fn size(&self) -> usize {
        self.workers.len()
    }

    pub fn execute<F: FnOnce() + Send + 'static>(&self, job: F) {
        if let Some(tx) = &self.sender {
            // Receivers live as long as the pool, so this cannot fail.
            let _ = tx.send(Box::new(job));
        }
    }
}

impl Drop for WorkerPool {
    /// Finish queued jobs, then join the workers.
    fn drop(&mut self) {
        self.sender.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
