#[path = "suites/gradients.rs"]
mod suite;

#[test]
fn visual_loss() {
    suite::visual_loss();
}

#[test]
fn discriminator_losses() {
    suite::discriminator_losses();
}

#[test]
fn cross_entropies_through_softmax() {
    suite::cross_entropies_through_softmax();
}

#[test]
fn classifier_loss_through_network() {
    suite::classifier_loss_through_network();
}

#[test]
fn binary_map_loss() {
    suite::binary_map_loss();
}

#[test]
fn generator_objective_gradients() {
    suite::generator_objective_gradients();
}

#[test]
fn discriminator_objective_gradients() {
    suite::discriminator_objective_gradients();
}
