//! Two people explore alternatives side by side in tabs of a parallel
//! group, then one result is merged back into the shared namespace.
//!
//!     cargo run -p nbcollab --example parallel_groups

use nbcollab::kernel::{Kernel, ScopeRef};
use nbcollab::model::TabId;

fn show(k: &Kernel, label: &str, scope: &ScopeRef) {
    let rate = k.get(scope, "rate").map(|v| v.to_string()).unwrap_or("-".into());
    let total = k.get(scope, "total").map(|v| v.to_string()).unwrap_or("-".into());
    println!("{label:>8}: rate={rate} total={total}");
}

fn main() {
    let mut k = Kernel::new();
    k.execute_source(&ScopeRef::Global, "rate = 0.1\nbase = 200").unwrap();

    k.register_group("plel");
    let (t1, t2) = (TabId::new("t1"), TabId::new("t2"));
    k.create_tab_env("plel", &t1).unwrap();
    k.create_tab_env("plel", &t2).unwrap();
    k.set_main_tab("plel", Some(t1.clone())).unwrap();
    let (a, b) = (ScopeRef::tab("plel", t1.clone()), ScopeRef::tab("plel", t2.clone()));

    k.execute_source(&a, "rate = 0.25\ntotal = base * (1 + rate)").unwrap();
    k.execute_source(&b, "rate = 0.5\ntotal = base * (1 + rate)").unwrap();
    show(&k, "global", &ScopeRef::Global);
    show(&k, "tab t1", &a);
    show(&k, "tab t2", &b);

    // Code outside the group sees the main tab through the group handle.
    let r = k.execute_source(&ScopeRef::Global, "print(_plel.total)").unwrap();
    print!("main tab total seen from outside: {}", r.text());

    let merged = k.merge_main_tab("plel").unwrap();
    println!("merged {merged:?}");
    show(&k, "global", &ScopeRef::Global);
}
