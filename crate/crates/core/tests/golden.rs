mod common;

#[test]
fn single_node_redirection() {
    common::single_node_redirection();
}

#[test]
fn two_node_prefetch_windows() {
    common::two_node_prefetch_windows();
}

#[test]
fn occupied_prefetch_slot_is_caught() {
    common::occupied_prefetch_slot_is_caught();
}

#[test]
fn prefetch_off_sends_one_payload_per_request() {
    common::prefetch_off_sends_one_payload_per_request();
}
