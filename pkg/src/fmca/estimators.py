"""scikit-learn compatible wrappers.

``FMCA`` maps a list of per-utterance frame arrays to eigenfunction traces,
``PowerFeatures`` turns traces into flattened K x T power matrices and
``PowerMLPClassifier`` classifies them, so the whole chain drops into a
:class:`sklearn.pipeline.Pipeline`.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_array, check_is_fitted

from . import engine
from ._validation import check_frame_list, check_labels
from .features import extract_features, train_classifier


class FMCA(TransformerMixin, BaseEstimator):
    """Twin-network dependence eigenspace learned from same-class frame pairs.

    Parameters
    ----------
    n_components : int
        Number of eigenfunctions (network output width).
    hidden_units, n_layers : int
        Width and count of the layer-normalized hidden layers.
    learning_rate : float
        Adam step size for both networks.
    epsilon : float
        Diagonal regularizer added to the correlation matrices during training.
    n_iter : int
        Training iterations (minibatches).
    batch_size : int
        Frame pairs per iteration.
    activation : {"tanh", "relu"}
    head : {"linear", "softmax"}
        Output nonlinearity of both networks.
    head_epsilon : float
        Regularizer for the whitening head; 0 whitens the training outputs exactly.
    random_state : int

    Attributes
    ----------
    model_ : FmcaModel
    spectrum_ : ndarray of shape (n_components,)
    cost_history_ : list of (iteration, cost)
    """

    def __init__(self, n_components=8, hidden_units=200, n_layers=3, learning_rate=1e-3,
                 epsilon=1e-4, n_iter=7000, batch_size=512, activation="tanh", head="linear",
                 head_epsilon=0.0, random_state=0):
        self.n_components = n_components
        self.hidden_units = hidden_units
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.activation = activation
        self.head = head
        self.head_epsilon = head_epsilon
        self.random_state = random_state

    def _train_kwargs(self):
        return dict(n_components=self.n_components, hidden_units=self.hidden_units,
                    n_layers=self.n_layers, lr=self.learning_rate, epsilon=self.epsilon,
                    n_iter=self.n_iter, batch_size=self.batch_size, seed=self.random_state,
                    activation=self.activation, head=self.head,
                    head_epsilon=self.head_epsilon)

    def _set_model(self, model):
        self.model_ = model
        self.spectrum_ = model.spectrum
        self.cost_history_ = model.cost_history
        self.n_features_in_ = model.input_dim
        return self

    def fit(self, X, y=None):
        """Fit on utterances ``X`` (list of (W, D) frame arrays or a FrameDataset) with class labels ``y``."""
        if isinstance(X, engine.FrameDataset) and y is None:
            dataset = X
        else:
            arrays, _ = check_frame_list(X, allow_single=False)
            if y is None:
                raise ValueError("FMCA.fit needs class labels to form same-class pairs")
            dataset = engine.FrameDataset.from_list(arrays, check_labels(y, len(arrays)))
        return self._set_model(engine.train_fmca(dataset, **self._train_kwargs()))

    def fit_pairs(self, X, U):
        """Fit on explicit joint samples: row ``i`` of ``X`` pairs with row ``i`` of ``U``."""
        return self._set_model(engine.train_fmca_pairs(X, U, **self._train_kwargs()))

    def transform(self, X):
        """Eigenfunction traces: one (W, n_components) array per utterance.

        A single 2-D array in gives a single trace out.
        """
        check_is_fitted(self, "model_")
        arrays, single = check_frame_list(X, width=self.n_features_in_)
        traces = [engine.project(self.model_, a) for a in arrays]
        return traces[0] if single else traces


class PowerFeatures(TransformerMixin, BaseEstimator):
    """Mean squared trace value per component over ``n_intervals`` equal time slices."""

    def __init__(self, n_intervals=6):
        self.n_intervals = n_intervals

    def fit(self, X, y=None):
        arrays, _ = check_frame_list(X, allow_single=False)
        self.n_components_ = arrays[0].shape[1]
        return self

    def transform(self, X):
        arrays, _ = check_frame_list(X, allow_single=False)
        return np.stack([extract_features(a, self.n_intervals).flatten() for a in arrays])


class PowerMLPClassifier(ClassifierMixin, BaseEstimator):
    """Single-hidden-layer perceptron with softmax output, trained by Adam on cross-entropy."""

    def __init__(self, hidden_units=40, learning_rate=1e-3, max_epochs=300, patience=30,
                 batch_size=32, standardize=True, random_state=0):
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_labels(y, X.shape[0])
        self.model_ = train_classifier(X, y, self.hidden_units, self.learning_rate, self.max_epochs,
                                       self.patience, self.batch_size, self.standardize,
                                       self.random_state)
        self.classes_ = self.model_.classes
        self.n_features_in_ = X.shape[1]
        self.train_accuracy_ = self.model_.train_accuracy
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_array(X, dtype=np.float64))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X, dtype=np.float64))


def make_pipeline(config):
    """Frames -> traces -> power features -> classifier, parameterized by a PipelineConfig."""
    return Pipeline([
        ("fmca", FMCA(config.n_components, config.hidden_units, config.n_layers, config.fmca_lr,
                      config.epsilon, config.n_iter, config.batch_size, config.activation,
                      config.head, config.head_epsilon, config.seed)),
        ("power", PowerFeatures(config.n_intervals)),
        ("mlp", PowerMLPClassifier(config.clf_hidden_units, config.clf_lr, config.clf_epochs,
                                   config.clf_patience, config.clf_batch_size, config.standardize,
                                   config.seed)),
    ])
