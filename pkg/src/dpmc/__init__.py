"""Joint-differentially-private low-rank matrix completion."""

from .baselines import (PgdConfig, SvdConfig, nuclear_project, run_private_pgd, run_private_svd,
                        step_schedule, top_r_subspace)
from .data import (ObservedMatrix, RatingsDataset, TrainTestSplit, center_per_user, clip_rows,
                   default_row_bound, parse_ratings, preprocess, rescale_ratings, split_train_test,
                   subsample_per_user, synthetic_rank_one)
from .fw import (FwConfig, GlobalBroadcast, lambda_prime, local_update, project_row_factored,
                 run_nonprivate_fw, run_private_fw, suggest_T)
from .linalg import (EigPair, SparseRows, covariance_accumulate, private_oja, sparse_gram_matvec,
                     top_eig_exact)
from .models import DenseModel, FactoredModel, load_model, save_model
from .privacy import (NoiseScale, PrivacyError, PrivacyParams, RngStream, gaussian_vector, noise_scale,
                      symmetric_noise_matrix, validate_params)

__version__ = "0.1.0"
