//! Small shared utilities: canonical JSON for hashing/replay keys, and a
//! bounded parallel map that preserves input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde_json::Value;

/// Rebuilds a JSON value with every object's keys in ascending byte order,
/// recursively. Arrays keep their order.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::with_capacity(map.len());
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Compact serialization of the canonicalized value. Two structurally equal
/// values always produce the same string, independent of construction order.
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(&canonicalize(value)).expect("canonical JSON never fails to serialize")
}

/// Applies `f` to every item with at most `parallelism` worker threads,
/// returning results in input order. `parallelism <= 1` runs inline.
pub fn ordered_parallel_map<T, U, F>(items: &[T], parallelism: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let n = items.len();
    let workers = parallelism.max(1).min(n);
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, U)>> = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut local = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    local.push((i, f(&items[i])));
                }
                results.lock().unwrap().extend(local);
            });
        }
    });

    let mut pairs = results.into_inner().unwrap();
    pairs.sort_by_key(|(i, _)| *i);
    pairs.into_iter().map(|(_, u)| u).collect()
}

/// Counting semaphore bounding concurrent backend requests. One limiter is
/// shared by every HTTP client in a run so the cap is global, not per-client.
pub struct InflightLimiter {
    cap: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

impl InflightLimiter {
    pub fn new(cap: usize) -> std::sync::Arc<Self> {
        std::sync::Arc::new(InflightLimiter {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        })
    }

    /// Blocks until a slot is free; the returned guard releases it on drop.
    pub fn acquire(&self) -> InflightGuard<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.cap {
            count = self.released.wait(count).unwrap();
        }
        *count += 1;
        InflightGuard { limiter: self }
    }
}

pub struct InflightGuard<'a> {
    limiter: &'a InflightLimiter,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.limiter.in_flight.lock().unwrap();
        *count -= 1;
        self.limiter.released.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_keys_recursively() {
        let a = json!({"b": 1, "a": {"z": [1, {"y": 2, "x": 3}], "w": null}});
        let b = json!({"a": {"w": null, "z": [1, {"x": 3, "y": 2}]}, "b": 1});
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(
            canonical_json(&a),
            r#"{"a":{"w":null,"z":[1,{"x":3,"y":2}]},"b":1}"#
        );
    }

    #[test]
    fn canonical_json_keeps_array_order() {
        let v = json!([3, 1, 2]);
        assert_eq!(canonical_json(&v), "[3,1,2]");
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u64> = (0..97).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x).collect();
        for workers in [1, 2, 3, 8, 200] {
            let got = ordered_parallel_map(&items, workers, |x| {
                // stagger finish times so out-of-order completion is likely
                std::thread::sleep(std::time::Duration::from_micros(97 - x));
                x * x
            });
            assert_eq!(got, expected, "workers = {workers}");
        }
    }

    #[test]
    fn parallel_map_handles_empty_input() {
        let got: Vec<u32> = ordered_parallel_map(&[] as &[u32], 4, |x| *x);
        assert!(got.is_empty());
    }

    #[test]
    fn limiter_never_exceeds_cap() {
        let limiter = InflightLimiter::new(3);
        let peak = AtomicUsize::new(0);
        let current = AtomicUsize::new(0);
        let items: Vec<u32> = (0..40).collect();
        ordered_parallel_map(&items, 16, |_| {
            let _guard = limiter.acquire();
            let now = current.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_micros(200));
            current.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
