"""
Training on the bundled 8x8 digits
==================================

MNIST needs a download; scikit-learn ships a small handwritten-digit set that
exercises the same pipeline offline.  The trained network is written to
``digits_model.json`` for the other demos.
"""

import sys

from ttfs_vlsi import init_network
from ttfs_vlsi.dataio import digits_dataset, save_model
from ttfs_vlsi.trainer import TrainConfig, evaluate, train

train_set, test_set = digits_dataset(seed=0)
print(f"{len(train_set)} training and {len(test_set)} test images of {train_set.images.shape[1]} pixels")

model = init_network([64, 100, 10], seed=0)
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
config = TrainConfig(epochs=epochs, batch_size=32, seed=0)


def progress(entry):
    if entry["epoch"] % 5 == 0 or entry["epoch"] == 1:
        print(f"epoch {entry['epoch']:3d}  loss {entry['train_loss']:.4f}  "
              f"train {entry['train_accuracy']:.3f}  test {entry['val_accuracy']:.3f}")


result = train(model, train_set, config, validation=test_set, callback=progress)
report = evaluate(result.model, test_set)
print(f"ideal test accuracy {report.accuracy:.4f}, "
      f"mean earliest output spike {report.mean_earliest_output_time:.2f} ms, "
      f"no-spike rate {report.no_spike_rate:.3f}")
save_model(result.model, "digits_model.json", {"dataset": "digits", "epochs": epochs})
